"""
Piecewise-linear concave calculus on a finite interval [0, L].

A function is stored as its value at 0 plus (slope, length) segments whose
slopes are strictly decreasing and nonnegative, so concavity and monotonicity
hold by construction. Every value function of the tail-risk coordinate is
carried in this form.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import IO, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from cvarmdp.config import settings
from cvarmdp.exceptions import DomainError, PwlShapeError

# Segments shorter than this fraction of the domain are arithmetic debris.
ZERO_LENGTH_RATIO = 1e-15
LENGTH_SUM_RATIO = 1e-12
BREAKPOINT_SNAP_RATIO = 1e-12
POOLING_VALUE_RATIO = 1e-9


def _scaled_tolerance(tolerance: float, reference: float) -> float:
    return tolerance * max(1.0, abs(reference))


def _readonly(values: Iterable[float]) -> np.ndarray:
    array = np.array(values, dtype=float)
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class PwlConcave:
    """Monotone non-decreasing concave piecewise-linear function on [0, domain_length]"""
    value_at_zero: float
    slopes: np.ndarray
    lengths: np.ndarray
    domain_length: float
    _xs: np.ndarray = field(init=False, repr=False, default=None)
    _values: np.ndarray = field(init=False, repr=False, default=None)

    def __post_init__(self):
        object.__setattr__(self, "value_at_zero", float(self.value_at_zero))
        object.__setattr__(self, "domain_length", float(self.domain_length))
        object.__setattr__(self, "slopes", _readonly(self.slopes))
        object.__setattr__(self, "lengths", _readonly(self.lengths))
        check_shape(self)

        xs = np.concatenate(([0.0], np.cumsum(self.lengths)))
        xs[-1] = self.domain_length
        values = self.value_at_zero + np.concatenate(([0.0], np.cumsum(self.slopes * self.lengths)))
        object.__setattr__(self, "_xs", _readonly(xs))
        object.__setattr__(self, "_values", _readonly(values))

    @classmethod
    def from_segments(
        cls,
        value_at_zero: float,
        segments: Iterable[Tuple[float, float]],
        domain_length: Optional[float] = None,
        slope_tolerance: Optional[float] = None,
    ) -> "PwlConcave":
        """Build a function from raw segments, dropping debris and coalescing equal slopes"""
        pairs = list(segments)
        if not pairs:
            raise PwlShapeError("a piecewise-linear function needs at least one segment")
        slopes = np.array([float(q) for q, _ in pairs])
        lengths = np.array([float(l) for _, l in pairs])
        if domain_length is None:
            domain_length = float(lengths.sum())
        slopes, lengths = _normalize(slopes, lengths, domain_length, slope_tolerance)
        return cls(value_at_zero, slopes, lengths, domain_length)

    @classmethod
    def linear(cls, value_at_zero: float, slope: float, domain_length: float = 1.0) -> "PwlConcave":
        return cls(value_at_zero, [slope], [domain_length], domain_length)

    @classmethod
    def from_rows(cls, rows: Sequence[Tuple[float, float, float]]) -> "PwlConcave":
        """Rebuild from (y, value, right_slope) breakpoint rows in increasing y"""
        if len(rows) < 2:
            raise PwlShapeError("breakpoint rows need at least the two endpoints")
        ys = np.array([r[0] for r in rows], dtype=float)
        slopes = np.array([r[2] for r in rows[:-1]], dtype=float)
        return cls(rows[0][1], slopes, np.diff(ys), ys[-1])

    @property
    def breakpoints(self) -> np.ndarray:
        return self._xs

    @property
    def breakpoint_values(self) -> np.ndarray:
        return self._values

    @property
    def segments(self) -> List[Tuple[float, float]]:
        return list(zip(self.slopes.tolist(), self.lengths.tolist()))

    @property
    def n_segments(self) -> int:
        return int(self.slopes.size)

    def __call__(self, y):
        return evaluate(self, y)

    def __repr__(self) -> str:
        segs = ", ".join(f"({q:.6g}, {l:.6g})" for q, l in self.segments)
        return f"PwlConcave({self.value_at_zero:.6g}, [{segs}], L={self.domain_length:.6g})"


@dataclass(frozen=True)
class UniquePoint:
    """The queried slope is a supergradient at exactly one point"""
    y: float

    def contains(self, y: float, tolerance: float = 1e-9) -> bool:
        return abs(y - self.y) <= tolerance


@dataclass(frozen=True)
class LinearInterval:
    """Maximal open interval on which the function is linear with the queried slope"""
    lo: float
    hi: float
    slope: float

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.lo + self.hi)

    def contains(self, y: float, tolerance: float = 1e-9) -> bool:
        return self.lo - tolerance <= y <= self.hi + tolerance


SuperdiffResult = Union[UniquePoint, LinearInterval]


def check_shape(f: PwlConcave) -> None:
    """Assert the structural invariants of a PwlConcave"""
    slopes, lengths, L = f.slopes, f.lengths, f.domain_length
    if slopes.ndim != 1 or slopes.shape != lengths.shape or slopes.size == 0:
        raise PwlShapeError("slopes and lengths must be non-empty 1-d arrays of equal size")
    if not L > 0 or not math.isfinite(L):
        raise PwlShapeError(f"domain length must be positive and finite, got {L}")
    if not np.all(np.isfinite(slopes)) or not math.isfinite(f.value_at_zero):
        raise PwlShapeError("slopes and value at zero must be finite")
    if np.any(lengths <= 0):
        raise PwlShapeError(f"segment lengths must be positive: {lengths.tolist()}")
    if np.any(slopes < 0):
        raise PwlShapeError(f"slopes must be nonnegative: {slopes.tolist()}")
    if slopes.size > 1 and np.any(np.diff(slopes) >= 0):
        raise PwlShapeError(f"slopes must be strictly decreasing: {slopes.tolist()}")
    if abs(lengths.sum() - L) > LENGTH_SUM_RATIO * max(1.0, L):
        raise PwlShapeError(f"segment lengths sum to {lengths.sum()!r}, expected {L!r}")


def _normalize(
    slopes: np.ndarray,
    lengths: np.ndarray,
    domain_length: float,
    slope_tolerance: Optional[float] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """Drop zero-length debris and coalesce adjacent slopes equal within tolerance"""
    tol = settings.slope_tolerance if slope_tolerance is None else slope_tolerance

    keep = lengths >= ZERO_LENGTH_RATIO * domain_length
    if not np.any(keep):
        keep = lengths == lengths.max()
    slopes, lengths = slopes[keep], lengths[keep]

    if slopes.size > 1:
        drops = slopes[:-1] - slopes[1:]
        new_group = np.abs(drops) > tol * np.maximum(1.0, np.abs(slopes[:-1]))
        starts = np.concatenate(([0], np.nonzero(new_group)[0] + 1))
        grouped_lengths = np.add.reduceat(lengths, starts)
        slopes = np.add.reduceat(slopes * lengths, starts) / grouped_lengths
        lengths = grouped_lengths

    # round-off below zero on flat segments
    slopes = np.where((slopes < 0) & (slopes >= -tol), 0.0, slopes)
    return slopes, lengths


def _pool_adjacent_violators(slopes: np.ndarray, lengths: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Restore non-increasing slopes by pooling adjacent violators (length-weighted)"""
    pooled_slopes: List[float] = []
    pooled_lengths: List[float] = []
    for q, l in zip(slopes.tolist(), lengths.tolist()):
        pooled_slopes.append(q)
        pooled_lengths.append(l)
        while len(pooled_slopes) > 1 and pooled_slopes[-1] > pooled_slopes[-2]:
            q2, l2 = pooled_slopes.pop(), pooled_lengths.pop()
            q1, l1 = pooled_slopes.pop(), pooled_lengths.pop()
            pooled_slopes.append((q1 * l1 + q2 * l2) / (l1 + l2))
            pooled_lengths.append(l1 + l2)
    return np.array(pooled_slopes), np.array(pooled_lengths)


def _snap_tolerance(f: PwlConcave) -> float:
    return BREAKPOINT_SNAP_RATIO * max(1.0, f.domain_length)


def _locate(f: PwlConcave, y: float) -> Tuple[int, bool]:
    """Return (breakpoint index, True) when y sits on a breakpoint, else (segment index, False)"""
    y = float(y)
    tol = _snap_tolerance(f)
    if not (-tol <= y <= f.domain_length + tol):
        raise DomainError(f"y={y!r} outside [0, {f.domain_length!r}]")
    xs = f.breakpoints
    j = int(np.searchsorted(xs, y))
    for k in (j - 1, j):
        if 0 <= k < xs.size and abs(xs[k] - y) <= tol:
            return k, True
    return j - 1, False


def evaluate(f: PwlConcave, y):
    """Value of f at y (scalar or array); exact at breakpoints"""
    ys = np.asarray(y, dtype=float)
    tol = _snap_tolerance(f)
    if np.any(ys < -tol) or np.any(ys > f.domain_length + tol):
        raise DomainError(f"y outside [0, {f.domain_length!r}]")
    ys = np.clip(ys, 0.0, f.domain_length)
    xs = f.breakpoints
    k = np.clip(np.searchsorted(xs, ys, side="right") - 1, 0, f.n_segments - 1)
    result = f.breakpoint_values[k] + f.slopes[k] * (ys - xs[k])
    if np.ndim(result) == 0:
        return float(result)
    return result


def right_deriv(f: PwlConcave, y: float) -> float:
    """Right derivative d+f(y), with d+f(L) = 0"""
    k, on_breakpoint = _locate(f, y)
    if on_breakpoint and k == f.n_segments:
        return 0.0
    return float(f.slopes[k])


def left_deriv(f: PwlConcave, y: float) -> float:
    """Left derivative d-f(y), with d-f(0) = +inf"""
    k, on_breakpoint = _locate(f, y)
    if on_breakpoint:
        return math.inf if k == 0 else float(f.slopes[k - 1])
    return float(f.slopes[k])


def invert_superdifferential(
    f: PwlConcave,
    u: float,
    tolerance: Optional[float] = None,
) -> SuperdiffResult:
    """Find where u is a supergradient of f: a unique point or a maximal linear interval"""
    tau = settings.superdiff_tolerance if tolerance is None else tolerance
    u = float(u)
    if math.isnan(u):
        raise DomainError("cannot invert the superdifferential at NaN")
    xs = f.breakpoints
    if math.isinf(u):
        return UniquePoint(0.0) if u > 0 else UniquePoint(f.domain_length)
    u = max(u, 0.0)

    close = np.nonzero(np.abs(f.slopes - u) <= _scaled_tolerance(tau, u))[0]
    if close.size:
        i = int(close[0])
        return LinearInterval(float(xs[i]), float(xs[i + 1]), float(f.slopes[i]))
    k = int(np.count_nonzero(f.slopes > u))
    return UniquePoint(float(xs[k]))


def transform_successor(v_next: PwlConcave, c1: float, c: float, beta: float) -> PwlConcave:
    """c1 + y*c + beta*V_next(y): the successor term of the minimax backup"""
    if beta <= 0:
        raise DomainError(f"discount must be positive, got {beta!r}")
    return PwlConcave.from_segments(
        c1 + beta * v_next.value_at_zero,
        zip((c + beta * v_next.slopes).tolist(), v_next.lengths.tolist()),
        domain_length=v_next.domain_length,
    )


def scale_argument(f: PwlConcave, p: float) -> PwlConcave:
    """v(z) = p * f(z/p) on [0, p*L]: slopes kept, lengths and value scaled by p"""
    if not p > 0:
        raise DomainError(f"scaling probability must be positive, got {p!r}")
    return PwlConcave(f.value_at_zero * p, f.slopes, f.lengths * p, f.domain_length * p)


def merge_subroutine1(parts: Sequence[PwlConcave], slope_tolerance: Optional[float] = None) -> PwlConcave:
    """Sort all segments of all parts by decreasing slope and coalesce equal slopes"""
    if not parts:
        raise DomainError("merge needs at least one part")
    if len(parts) == 1:
        return parts[0]
    slopes = np.concatenate([p.slopes for p in parts])
    lengths = np.concatenate([p.lengths for p in parts])
    order = np.argsort(-slopes, kind="stable")
    return PwlConcave.from_segments(
        sum(p.value_at_zero for p in parts),
        zip(slopes[order].tolist(), lengths[order].tolist()),
        domain_length=sum(p.domain_length for p in parts),
        slope_tolerance=slope_tolerance,
    )


def _common_domain(parts: Sequence[PwlConcave]) -> float:
    if not parts:
        raise DomainError("need at least one function")
    L = parts[0].domain_length
    for p in parts[1:]:
        if abs(p.domain_length - L) > LENGTH_SUM_RATIO * max(1.0, L):
            raise DomainError(f"mismatched domains: {p.domain_length!r} vs {L!r}")
    return L


def _merged_points(points: np.ndarray, L: float) -> np.ndarray:
    points = np.unique(np.clip(points, 0.0, L))
    tol = BREAKPOINT_SNAP_RATIO * max(1.0, L)
    keep = np.concatenate(([True], np.diff(points) > tol))
    points = points[keep]
    points[0] = 0.0
    if L - points[-1] <= tol:
        points[-1] = L
    else:
        points = np.append(points, L)
    return points


def _slopes_at(f: PwlConcave, ys: np.ndarray) -> np.ndarray:
    k = np.clip(np.searchsorted(f.breakpoints, ys, side="right") - 1, 0, f.n_segments - 1)
    return f.slopes[k]


def min_envelope(parts: Sequence[PwlConcave]) -> PwlConcave:
    """Pointwise minimum of concave functions sharing a domain"""
    L = _common_domain(parts)
    if len(parts) == 1:
        return parts[0]

    grid = _merged_points(np.concatenate([p.breakpoints for p in parts]), L)
    values = np.array([evaluate(p, grid) for p in parts])
    left, width = grid[:-1], np.diff(grid)
    candidates = [grid]
    for i in range(len(parts)):
        for j in range(i + 1, len(parts)):
            gap = values[i] - values[j]
            ga, gb = gap[:-1], gap[1:]
            crossing = ga * gb < 0
            if np.any(crossing):
                t = ga[crossing] / (ga[crossing] - gb[crossing])
                candidates.append(left[crossing] + t * width[crossing])
    points = _merged_points(np.concatenate(candidates), L)

    mids = 0.5 * (points[:-1] + points[1:])
    mid_values = np.array([evaluate(p, mids) for p in parts])
    # np.argmin keeps the earliest part on exact ties
    choice = np.argmin(mid_values, axis=0)
    piece_slopes = np.array([_slopes_at(p, mids) for p in parts])
    slopes = piece_slopes[choice, np.arange(mids.size)]
    lengths = np.diff(points)

    pooled_slopes, pooled_lengths = _pool_adjacent_violators(slopes, lengths)
    if pooled_slopes.size != slopes.size:
        raw_xs = np.concatenate(([0.0], np.cumsum(lengths)))
        raw_values = np.concatenate(([0.0], np.cumsum(slopes * lengths)))
        pooled_xs = np.concatenate(([0.0], np.cumsum(pooled_lengths)))
        pooled_values = np.concatenate(([0.0], np.cumsum(pooled_slopes * pooled_lengths)))
        drift = float(np.max(np.abs(np.interp(raw_xs, pooled_xs, pooled_values) - raw_values)))
        scale = max(1.0, float(np.max(np.abs(values))))
        if drift > POOLING_VALUE_RATIO * scale:
            raise PwlShapeError(f"minimum of concave parts is not concave (drift {drift!r})")

    return PwlConcave.from_segments(
        float(values[:, 0].min()),
        zip(pooled_slopes.tolist(), pooled_lengths.tolist()),
        domain_length=L,
    )


def sup_distance(f: PwlConcave, g: PwlConcave) -> float:
    """Exact sup-norm distance, attained on the union of breakpoints"""
    L = _common_domain([f, g])
    points = _merged_points(np.concatenate([f.breakpoints, g.breakpoints]), L)
    return float(np.max(np.abs(evaluate(f, points) - evaluate(g, points))))


def simplify(f: PwlConcave, epsilon: float) -> PwlConcave:
    """Merge adjacent segments whose slopes differ by at most epsilon (relative)"""
    if epsilon <= 0 or f.n_segments == 1:
        return f
    slopes: List[float] = []
    lengths: List[float] = []
    leader = None
    for q, l in f.segments:
        if leader is not None and leader - q <= epsilon * max(1.0, abs(leader)):
            total = lengths[-1] + l
            slopes[-1] = (slopes[-1] * lengths[-1] + q * l) / total
            lengths[-1] = total
        else:
            slopes.append(q)
            lengths.append(l)
            leader = q
    return PwlConcave.from_segments(f.value_at_zero, zip(slopes, lengths), domain_length=f.domain_length)


def to_rows(f: PwlConcave) -> List[Tuple[float, float, float]]:
    """(y, value, right_slope) at every breakpoint in increasing y"""
    slopes = f.slopes.tolist() + [0.0]
    return list(zip(f.breakpoints.tolist(), f.breakpoint_values.tolist(), slopes))


def format_number(x: float) -> str:
    return f"{x:.12g}"


def write_csv(f: PwlConcave, stream: IO[str]) -> None:
    """CSV export with header y,value,right_slope"""
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(["y", "value", "right_slope"])
    for y, value, slope in to_rows(f):
        writer.writerow([format_number(y), format_number(value), format_number(slope)])
