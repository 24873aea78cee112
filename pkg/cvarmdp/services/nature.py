"""
The Nature's inner maximisation as a mass-transfer problem.

Given successor value functions V(x', .) on [0, 1] and probabilities p(x'),
the Nature distributes a tail level y over successors as z(x') = y p(x') b(x')
with 0 <= z(x') <= p(x') and sum z = y, maximising sum p(x') V(x', z/p(x')).
In z-coordinates each successor is v(x', z) = p V(x', z/p), and the optimum
is a greedy fill of successor pieces by decreasing slope.
"""
import logging
import math
from dataclasses import dataclass
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from cvarmdp.config import settings
from cvarmdp.exceptions import DomainError
from cvarmdp.services.pwl import (
    PwlConcave,
    evaluate,
    left_deriv,
    merge_subroutine1,
    right_deriv,
    scale_argument,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TransferInstance:
    """Successors with positive probability and their transformed value functions"""
    targets: Tuple[int, ...]
    probabilities: Tuple[float, ...]
    functions: Tuple[PwlConcave, ...]

    def __post_init__(self):
        if not self.targets:
            raise DomainError("a transfer instance needs at least one successor")
        if not (len(self.targets) == len(self.probabilities) == len(self.functions)):
            raise DomainError("targets, probabilities and functions must align")
        if any(not p > 0 for p in self.probabilities):
            raise DomainError(f"successor probabilities must be positive: {self.probabilities}")
        total = math.fsum(self.probabilities)
        if abs(total - 1.0) > settings.prob_tolerance:
            raise DomainError(f"successor probabilities sum to {total!r}")

    @property
    def size(self) -> int:
        return len(self.targets)

    @property
    def mass_bound(self) -> float:
        """d = max 1/p over the support"""
        return 1.0 / min(self.probabilities)

    def source(self, k: int) -> PwlConcave:
        """v(x', .) on [0, p(x')]"""
        return scale_argument(self.functions[k], self.probabilities[k])

    def objective(self, b: Sequence[float], y: float) -> float:
        """sum p(x') V(x', y b(x')) for a feasible b"""
        return math.fsum(
            p * evaluate(f, min(1.0, y * bk))
            for p, f, bk in zip(self.probabilities, self.functions, b)
        )


@dataclass(frozen=True)
class NatureAllocation:
    y: float
    z: Dict[int, float]
    b: Dict[int, float]
    value: float

    def level(self, target: int) -> float:
        """Tail level y b(x') handed to successor x'"""
        return min(1.0, self.y * self.b.get(target, 0.0))


def build_F(inst: TransferInstance, slope_tolerance: Optional[float] = None) -> PwlConcave:
    """Maximal value F(y) of the transfer problem, a PwlConcave on [0, 1]"""
    F = merge_subroutine1([inst.source(k) for k in range(inst.size)], slope_tolerance)
    if abs(F.domain_length - 1.0) > 1e-12:
        F = PwlConcave(F.value_at_zero, F.slopes, F.lengths / F.domain_length, 1.0)
    return F


def _greedy_fill(inst: TransferInstance, y: float) -> np.ndarray:
    slopes = []
    owners = []
    lengths = []
    for k in range(inst.size):
        v = inst.source(k)
        slopes.append(v.slopes)
        lengths.append(v.lengths)
        owners.append(np.full(v.n_segments, k))
    slopes = np.concatenate(slopes)
    lengths = np.concatenate(lengths)
    owners = np.concatenate(owners)

    # stable sort keeps declared successor order within a slope tier
    order = np.argsort(-slopes, kind="stable")
    filled = np.clip(y - np.concatenate(([0.0], np.cumsum(lengths[order])[:-1])), 0.0, lengths[order])
    z = np.zeros(inst.size)
    np.add.at(z, owners[order], filled)
    return np.minimum(z, np.array(inst.probabilities))


def optimal_allocation(inst: TransferInstance, y: float) -> NatureAllocation:
    """Greedy optimal z*(y) and b*(y); b is identically 1 on the support at y = 0"""
    y = float(y)
    if not (-1e-12 <= y <= 1.0 + 1e-12):
        raise DomainError(f"tail level y={y!r} outside [0, 1]")
    y = min(max(y, 0.0), 1.0)

    probs = np.array(inst.probabilities)
    if y == 0.0:
        z = np.zeros(inst.size)
        b = np.ones(inst.size)
    else:
        z = _greedy_fill(inst, y)
        b = z / (y * probs)
    value = math.fsum(
        p * evaluate(f, min(1.0, zk / p)) for p, f, zk in zip(probs, inst.functions, z)
    )
    return NatureAllocation(
        y=y,
        z=dict(zip(inst.targets, z.tolist())),
        b=dict(zip(inst.targets, b.tolist())),
        value=value,
    )


def allocation_derivatives(inst: TransferInstance, allocation: NatureAllocation) -> Tuple[float, float]:
    """
    Largest right derivative and smallest left derivative of the sources at
    the allocation, with d+v(x', p) = 0 and d-v(x', 0) = +inf.
    """
    right = []
    left = []
    for k, target in enumerate(inst.targets):
        v = inst.source(k)
        zk = min(max(allocation.z[target], 0.0), v.domain_length)
        right.append(right_deriv(v, zk))
        left.append(left_deriv(v, zk))
    return max(right), min(left)
