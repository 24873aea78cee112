"""
Boundary Check - alpha = 1, alpha -> 0, deterministic and augmented-state limits
"""
from typing import List

from cvarmdp.checks.base_check import BaseCheck, CheckContext, CheckFinding
from cvarmdp.models.mdp import AUGMENTED_SEPARATOR, RandomCostSpec
from cvarmdp.services.pwl import right_deriv, sup_distance
from cvarmdp.services.solver import cvar_value, risk_neutral_value, worst_path_value


class BoundaryCheck(BaseCheck):
    """Closed-form limits the tables must reproduce"""

    def __init__(self, tolerance: float = 1e-9):
        super().__init__(
            name="boundary consistency",
            description="alpha=1 risk-neutral value, worst-path slope at 0, deterministic linearity",
            tolerance=tolerance,
        )

    def _risk_neutral(self, context: CheckContext) -> CheckFinding:
        tables = context.tables
        expected = risk_neutral_value(tables.source_spec, tables.horizon)[tables.spec.states[context.x0]]
        actual = cvar_value(tables, context.x0, 1.0, context.mode)
        return self._compare("alpha=1 risk-neutral", context, actual, expected, "value at alpha=1")

    def _worst_path(self, context: CheckContext) -> CheckFinding:
        tables = context.tables
        source = tables.source_spec
        name = "alpha->0 worst path"
        if source.has_mean_costs or any(source.terminal_cvar_cost) or not tables.cost_shift.is_identity:
            return self._skipped(name, context, "needs zero terminal costs and a pure CVaR spec")
        v = tables.value_function(tables.last_stage, context.x0)
        if abs(v.value_at_zero) > self.tolerance:
            return self._skipped(name, context, "V(x, 0) is not zero")
        expected = worst_path_value(source, tables.horizon)[source.states[context.x0]]
        return self._compare(name, context, right_deriv(v, 0.0), expected, "right slope at 0")

    def _deterministic(self, context: CheckContext) -> CheckFinding:
        tables = context.tables
        name = "deterministic linearity"
        if any(len(edges) > 1 for edges in tables.spec.transitions.values()):
            return self._skipped(name, context, "stochastic transitions")
        v = tables.value_function(tables.last_stage, context.x0)
        spread = float(v.slopes.max() - v.slopes.min())
        return CheckFinding(name, context.index, spread < 1e-12, spread,
                            "" if spread < 1e-12 else f"{context.label}: slope spread {spread!r}")

    def _augmented(self, context: CheckContext) -> CheckFinding:
        tables = context.tables
        name = "augmented-state invariance"
        if not isinstance(context.spec, RandomCostSpec):
            return self._skipped(name, context, "deterministic one-step costs")
        groups = {}
        for x, state in enumerate(tables.spec.states):
            groups.setdefault(state.rsplit(AUGMENTED_SEPARATOR, 1)[0], []).append(x)
        worst = 0.0
        for members in groups.values():
            for stage in tables.v_stages:
                first = stage[members[0]]
                for other in members[1:]:
                    worst = max(worst, sup_distance(first, stage[other]))
        passed = worst <= self.tolerance
        return CheckFinding(name, context.index, passed, worst,
                            "" if passed else f"{context.label}: augmented copies differ by {worst!r}")

    def evaluate(self, context: CheckContext) -> List[CheckFinding]:
        return [
            self._risk_neutral(context),
            self._worst_path(context),
            self._deterministic(context),
            self._augmented(context),
        ]
