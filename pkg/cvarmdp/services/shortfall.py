"""
Expected-shortfall functions of a cost threshold.

W(x, s) = min over policies of E[Z1 + (Z - s)^+] is continuous and piecewise
linear on the whole real line but in general not convex. It is non-increasing
with slopes in [-1, 0], slope -1 left of its first breakpoint and flat right
of its last. The tail-level value function is its concave conjugate,
V(x, y) = min over s of y*s + W(x, s), so the backups run on W and V is read
off the lower convex hull of the breakpoints of W.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, List, Sequence, Tuple

import numpy as np

from cvarmdp.exceptions import DomainError, PwlShapeError
from cvarmdp.services.pwl import PwlConcave

# Thresholds closer than this (relative) are one breakpoint.
THRESHOLD_SNAP_RATIO = 1e-12
COLLINEAR_RATIO = 1e-12
SLOPE_SLACK = 1e-9


def _readonly(values: Iterable[float]) -> np.ndarray:
    array = np.array(values, dtype=float)
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class ShortfallFunction:
    """Continuous piecewise-linear W(s) through (thresholds[i], values[i]) with fixed tails"""
    thresholds: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "thresholds", _readonly(self.thresholds))
        object.__setattr__(self, "values", _readonly(self.values))
        s, w = self.thresholds, self.values
        if s.ndim != 1 or s.shape != w.shape or s.size == 0:
            raise PwlShapeError("thresholds and values must be non-empty 1-d arrays of equal size")
        if not (np.all(np.isfinite(s)) and np.all(np.isfinite(w))):
            raise PwlShapeError("thresholds and values must be finite")
        if s.size > 1:
            if np.any(np.diff(s) <= 0):
                raise PwlShapeError(f"thresholds must be strictly increasing: {s.tolist()}")
            rise, run = np.diff(w), np.diff(s)
            slack = SLOPE_SLACK * max(1.0, float(np.max(np.abs(w))))
            if np.any(rise > slack) or np.any(rise < -run - slack):
                raise PwlShapeError(f"shortfall slopes must lie in [-1, 0]: {(rise / run).tolist()}")

    @classmethod
    def terminal(cls, mean_cost: float, cvar_cost: float) -> "ShortfallFunction":
        """v0_mean + (v0 - s)^+"""
        return cls([cvar_cost], [mean_cost])

    @classmethod
    def from_rows(cls, rows: Sequence[Tuple[float, float]]) -> "ShortfallFunction":
        if not rows:
            raise PwlShapeError("shortfall rows need at least one breakpoint")
        return cls([r[0] for r in rows], [r[1] for r in rows])

    @property
    def n_points(self) -> int:
        return int(self.thresholds.size)

    @property
    def floor(self) -> float:
        """Value right of the last breakpoint, the minimum of W"""
        return float(self.values[-1])

    def __call__(self, s):
        return evaluate_shortfall(self, s)

    def __repr__(self) -> str:
        points = ", ".join(f"({s:.6g}, {w:.6g})" for s, w in to_rows(self))
        return f"ShortfallFunction([{points}])"


def evaluate_shortfall(w: ShortfallFunction, s):
    """W(s) for a scalar or an array of thresholds"""
    ss = np.asarray(s, dtype=float)
    result = np.interp(ss, w.thresholds, w.values) + np.maximum(w.thresholds[0] - ss, 0.0)
    if np.ndim(result) == 0:
        return float(result)
    return result


def _snap(points: np.ndarray) -> np.ndarray:
    points = np.unique(points)
    if points.size < 2:
        return points
    tol = THRESHOLD_SNAP_RATIO * np.maximum(1.0, np.abs(points[1:]))
    keep = np.concatenate(([True], np.diff(points) > tol))
    return points[keep]


def _drop_collinear(s: np.ndarray, w: np.ndarray, tolerance: float) -> Tuple[np.ndarray, np.ndarray]:
    """Greedy chord compaction; every dropped point stays within tolerance of its chord"""
    if s.size <= 2:
        return s, w
    keep = [0]
    anchor = 0
    j = 1
    while j < s.size - 1:
        candidate = j + 1
        inner = slice(anchor + 1, candidate)
        chord = np.interp(s[inner], [s[anchor], s[candidate]], [w[anchor], w[candidate]])
        scale = COLLINEAR_RATIO * max(1.0, float(np.max(np.abs(w[inner]))))
        if np.max(np.abs(chord - w[inner])) <= max(tolerance, scale):
            j += 1
            continue
        keep.append(j)
        anchor = j
        j += 1
    keep.append(s.size - 1)
    return s[keep], w[keep]


def _build(s: np.ndarray, w: np.ndarray, tolerance: float = 0.0) -> ShortfallFunction:
    s, w = _drop_collinear(s, w, tolerance)
    # round-off can leave a flat tail a hair above the last value
    w = np.minimum.accumulate(w)
    return ShortfallFunction(s, w)


def shift_shortfall(w: ShortfallFunction, c1: float, c: float, beta: float) -> ShortfallFunction:
    """s -> c1 + beta W((s - c) / beta): the successor term after paying (c1, c)"""
    if beta <= 0:
        raise DomainError(f"discount must be positive, got {beta!r}")
    return ShortfallFunction(c + beta * w.thresholds, c1 + beta * w.values)


def mix_shortfall(weights: Sequence[float], parts: Sequence[ShortfallFunction]) -> ShortfallFunction:
    """Probability-weighted sum of shortfall functions"""
    if not parts or len(weights) != len(parts):
        raise DomainError("mix needs one weight per part")
    if len(parts) == 1 and weights[0] == 1.0:
        return parts[0]
    grid = _snap(np.concatenate([p.thresholds for p in parts]))
    values = sum(float(p) * evaluate_shortfall(f, grid) for p, f in zip(weights, parts))
    return _build(grid, np.asarray(values, dtype=float))


def min_shortfall(parts: Sequence[ShortfallFunction]) -> ShortfallFunction:
    """Pointwise minimum; the crossings inside each breakpoint gap become breakpoints"""
    if not parts:
        raise DomainError("need at least one function")
    if len(parts) == 1:
        return parts[0]
    grid = _snap(np.concatenate([p.thresholds for p in parts]))
    values = np.array([evaluate_shortfall(p, grid) for p in parts])
    candidates: List[np.ndarray] = [grid]
    left, width = grid[:-1], np.diff(grid)
    for i in range(len(parts)):
        for j in range(i + 1, len(parts)):
            gap = values[i] - values[j]
            ga, gb = gap[:-1], gap[1:]
            crossing = ga * gb < 0
            if np.any(crossing):
                t = ga[crossing] / (ga[crossing] - gb[crossing])
                candidates.append(left[crossing] + t * width[crossing])
    points = _snap(np.concatenate(candidates))
    lowest = np.min([evaluate_shortfall(p, points) for p in parts], axis=0)
    return _build(points, lowest)


def compact_shortfall(w: ShortfallFunction, epsilon: float) -> ShortfallFunction:
    """Drop breakpoints while the result stays within epsilon of w in sup norm"""
    if epsilon <= 0 or w.n_points <= 2:
        return w
    return _build(w.thresholds, w.values, epsilon)


def shortfall_distance(f: ShortfallFunction, g: ShortfallFunction) -> float:
    """Exact sup-norm distance; both tails are parallel so the breakpoints suffice"""
    grid = _snap(np.concatenate([f.thresholds, g.thresholds]))
    return float(np.max(np.abs(evaluate_shortfall(f, grid) - evaluate_shortfall(g, grid))))


def lower_hull(w: ShortfallFunction) -> Tuple[np.ndarray, np.ndarray]:
    """Vertices of the lower convex hull of the breakpoints, in increasing threshold"""
    hull: List[int] = []
    s, v = w.thresholds, w.values
    for k in range(s.size):
        while len(hull) >= 2:
            i, j = hull[-2], hull[-1]
            cross = (s[j] - s[i]) * (v[k] - v[i]) - (v[j] - v[i]) * (s[k] - s[i])
            if cross > 0:
                break
            hull.pop()
        hull.append(k)
    return s[hull], v[hull]


def conjugate(w: ShortfallFunction) -> PwlConcave:
    """
    V(y) = min over s of y*s + W(s) on [0, 1].

    Hull vertex j is the minimiser for y between minus the slopes of its two
    hull edges, so V's slopes are the hull thresholds in decreasing order.
    """
    s, v = lower_hull(w)
    edges = np.diff(v) / np.diff(s) if s.size > 1 else np.array([])
    bounds = np.clip(np.concatenate(([-1.0], edges, [0.0])), -1.0, 0.0)
    bounds = np.maximum.accumulate(bounds)
    lengths = np.diff(bounds)
    segments = [(float(q), float(l)) for q, l in zip(s[::-1], lengths[::-1]) if l > 0]
    if not segments:
        segments = [(float(s[0]), 1.0)]
    return PwlConcave.from_segments(float(v[-1]), segments, domain_length=1.0)


def to_rows(w: ShortfallFunction) -> List[Tuple[float, float]]:
    """(threshold, value) at every breakpoint"""
    return list(zip(w.thresholds.tolist(), w.values.tolist()))
