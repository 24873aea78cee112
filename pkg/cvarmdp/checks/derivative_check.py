"""
Derivative Check - one-sided derivative identities of the solved tables
"""
import math
from typing import List

import numpy as np

from cvarmdp.checks.base_check import BaseCheck, CheckContext, CheckFinding
from cvarmdp.exceptions import PwlShapeError
from cvarmdp.services.nature import allocation_derivatives, build_F, optimal_allocation
from cvarmdp.services.pwl import check_shape, left_deriv, right_deriv
from cvarmdp.services.solver import build_transfer_instance, optimal_action_set

RANDOM_LEVELS = 20


def _close(a: float, b: float, tolerance: float) -> bool:
    if math.isinf(a) or math.isinf(b):
        return a == b
    return abs(a - b) <= tolerance * max(1.0, abs(a), abs(b))


class DerivativeCheck(BaseCheck):
    """
    At every breakpoint of every V_n(x, .): the right derivative of V is the
    smallest right derivative of Q over optimal actions and the left
    derivative the largest left derivative. For every transfer problem the
    one-sided derivatives of F match the extreme source derivatives at the
    optimal allocation, and F never exceeds Q. Every function must pass the
    structural shape checks.
    """

    def __init__(self, tolerance: float = 1e-9, seed: int = 0):
        super().__init__(
            name="derivative identities",
            description="envelope and mass-transfer derivative identities plus shape invariants",
            tolerance=tolerance,
        )
        self.seed = seed

    def _shape(self, context: CheckContext) -> List[CheckFinding]:
        tables = context.tables
        functions = [f for stage in tables.v_stages for f in stage]
        functions += [q for stage in tables.q_stages for qs in stage for q in qs]
        for f in functions:
            try:
                check_shape(f)
            except PwlShapeError as e:
                return [CheckFinding("shape invariants", context.index, False, message=f"{context.label}: {e}")]
        return [CheckFinding("shape invariants", context.index, True)]

    def _envelope(self, context: CheckContext) -> List[CheckFinding]:
        tables = context.tables
        tol = self.tolerance
        worst = 0.0
        messages = []
        for n in range(1, tables.last_stage + 1):
            for x in range(tables.spec.n_states):
                v = tables.v_stages[n][x]
                qs = tables.q_stages[n][x]
                for y in v.breakpoints.tolist():
                    active = optimal_action_set(tables, n, x, y).actions
                    pairs = (
                        (right_deriv(v, y), min(right_deriv(qs[a], y) for a in active), "right"),
                        (left_deriv(v, y), max(left_deriv(qs[a], y) for a in active), "left"),
                    )
                    for got, want, side in pairs:
                        if not _close(got, want, tol):
                            messages.append(f"{context.label}: V_{n}({tables.spec.states[x]}) {side} derivative at y={y}: {got!r} vs {want!r}")
                            worst = max(worst, abs(got - want) if math.isfinite(got - want) else math.inf)
        return [CheckFinding("envelope derivatives", context.index, not messages, worst, "; ".join(messages[:3]))]

    def _transfer(self, context: CheckContext) -> List[CheckFinding]:
        tables = context.tables
        rng = np.random.default_rng(self.seed + context.index)
        tol = self.tolerance
        worst = 0.0
        messages = []
        for n in range(1, tables.last_stage + 1):
            v_prev = tables.v_stages[n - 1]
            for x, a in tables.spec.state_actions():
                inst = build_transfer_instance(tables.spec, v_prev, x, a)
                F = build_F(inst)
                q = tables.q_stages[n][x][a]
                levels = np.concatenate((F.breakpoints, rng.uniform(0.0, 1.0, RANDOM_LEVELS)))
                for y in levels.tolist():
                    allocation = optimal_allocation(inst, y)
                    max_right, min_left = allocation_derivatives(inst, allocation)
                    if max_right > min_left + tol * max(1.0, abs(max_right)):
                        messages.append(f"{context.label}: derivative ordering broken at y={y}")
                    bound, exact = F(y), q(y)
                    if bound > exact + tol * max(1.0, abs(exact)):
                        messages.append(f"{context.label}: transfer value {bound!r} above Q {exact!r} at y={y}")
                        worst = max(worst, bound - exact)
                    for got, want in ((right_deriv(F, y), max_right), (left_deriv(F, y), min_left)):
                        if not _close(got, want, tol):
                            messages.append(f"{context.label}: F derivative at y={y}: {got!r} vs {want!r}")
                            worst = max(worst, abs(got - want) if math.isfinite(got - want) else math.inf)
        return [CheckFinding("transfer derivatives", context.index, not messages, worst, "; ".join(messages[:3]))]

    def evaluate(self, context: CheckContext) -> List[CheckFinding]:
        return self._shape(context) + self._envelope(context) + self._transfer(context)
