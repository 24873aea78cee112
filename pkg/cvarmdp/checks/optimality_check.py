"""
Optimality Check - the runner's induced policy attains the optimal value
"""
from typing import List

from cvarmdp.checks.base_check import BaseCheck, CheckContext, CheckFinding
from cvarmdp.models.schemas import DerivativeSide
from cvarmdp.services.oracle import enumerate_distribution, objective_of_distribution
from cvarmdp.services.policy import induced_history_policy
from cvarmdp.services.solver import cvar_value, mode_tables


class OptimalityCheck(BaseCheck):
    """
    Runs the online algorithm over every reachable history, evaluates the
    resulting policy exactly on the original MDP and compares with the solved
    value, once per derivative side. Mean + CVaR runs on the tables re-solved
    for the level.
    """

    def __init__(self, tolerance: float = 1e-9):
        super().__init__(
            name="induced policy optimality",
            description="exact objective of the runner's policy equals cvar_value (both sides)",
            tolerance=tolerance,
        )

    def evaluate(self, context: CheckContext) -> List[CheckFinding]:
        findings = []
        tables = context.tables
        mode = context.mode
        for alpha in context.alphas:
            if alpha <= 0:
                continue
            expected = cvar_value(tables, context.x0, alpha, mode)
            runner_tables = mode_tables(tables, alpha, mode)
            for side in DerivativeSide:
                policy = induced_history_policy(runner_tables, context.x0, alpha, side)
                dist = enumerate_distribution(tables.source_spec, policy, context.x0, context.horizon)
                achieved = objective_of_distribution(dist, alpha, mode)
                findings.append(self._compare(
                    self.name, context, achieved, expected, f"alpha={alpha}, side={side.value}"
                ))
        return findings
