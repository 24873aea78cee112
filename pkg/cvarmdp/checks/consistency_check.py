"""
Consistency Check - recovered tail levels against the Nature's allocation
"""
from typing import List

from cvarmdp.checks.base_check import BaseCheck, CheckContext, CheckFinding
from cvarmdp.models.schemas import DerivativeSide
from cvarmdp.services.policy import iter_reachable_paths, nature_tail_levels
from cvarmdp.services.pwl import left_deriv, right_deriv
from cvarmdp.services.solver import ValueTables


def _in_superdifferential(tables: ValueTables, n: int, x: int, y: float, u: float, tol: float) -> bool:
    v = tables.v_stages[n][x]
    # at y = 1 every slope below the left derivative supports V
    lower = right_deriv(v, y) if y < 1.0 - tol else -float("inf")
    upper = left_deriv(v, y)
    scale = tol * max(1.0, abs(u)) if abs(u) != float("inf") else 0.0
    return lower - scale <= u <= upper + scale


class ConsistencyCheck(BaseCheck):
    """
    Along every reachable path, as long as the Nature's transfer attains Q,
    the true tail level of the Nature lies in the runner's reported point or
    interval and the propagated u supports the successor's value function at
    that level.
    """

    def __init__(self, tolerance: float = 1e-9):
        super().__init__(
            name="nature-runner consistency",
            description="true tail levels lie in the runner's recovered sets",
            tolerance=tolerance,
        )

    def evaluate(self, context: CheckContext) -> List[CheckFinding]:
        tables = context.tables
        tol = self.tolerance
        messages = []
        worst = 0.0
        checked = 0
        for alpha in context.alphas:
            if alpha <= 0:
                continue
            for side in DerivativeSide:
                for path in iter_reachable_paths(tables, context.x0, alpha, side):
                    records = nature_tail_levels(tables, context.x0, alpha, path, side)
                    for record in records[1:]:
                        checked += 1
                        n = tables.stage_index(context.horizon - record.t)
                        where = f"{context.label}: alpha={alpha} side={side.value} path={path} t={record.t}"
                        if not record.risk.contains(record.true_y, tol):
                            gap = max(record.risk.lo - record.true_y, record.true_y - record.risk.hi)
                            worst = max(worst, gap)
                            messages.append(f"{where}: true level {record.true_y!r} outside [{record.risk.lo!r}, {record.risk.hi!r}]")
                        if not _in_superdifferential(tables, n, record.state, record.true_y, record.incoming_u, tol):
                            messages.append(f"{where}: u={record.incoming_u!r} does not support V at {record.true_y!r}")
        if checked == 0:
            return [self._skipped(self.name, context, "no transitions to check")]
        return [CheckFinding(self.name, context.index, not messages, worst, "; ".join(messages[:3]))]
