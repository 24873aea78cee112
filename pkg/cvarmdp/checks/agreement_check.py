"""
Agreement Check - solved values against exhaustive policy search
"""
from typing import List

from cvarmdp.checks.base_check import BaseCheck, CheckContext, CheckFinding
from cvarmdp.exceptions import ResourceGuardError
from cvarmdp.services.oracle import exhaustive_policy_search
from cvarmdp.services.solver import cvar_value


class AgreementCheck(BaseCheck):
    """The optimal value from the tables equals the best value over all policies"""

    def __init__(self, tolerance: float = 1e-9):
        super().__init__(
            name="solver-oracle agreement",
            description="cvar_value equals exhaustive_policy_search at every alpha",
            tolerance=tolerance,
        )

    def evaluate(self, context: CheckContext) -> List[CheckFinding]:
        findings = []
        mode = context.mode
        for alpha in context.alphas:
            expected = cvar_value(context.tables, context.x0, alpha, mode)
            try:
                _, found = exhaustive_policy_search(
                    context.tables.source_spec, context.x0, alpha, context.horizon, mode
                )
            except ResourceGuardError as e:
                findings.append(self._skipped(self.name, context, f"guard: {e}"))
                continue
            findings.append(self._compare(self.name, context, expected, found, f"alpha={alpha}"))
        return findings
