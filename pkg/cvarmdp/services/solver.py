"""
Backward induction over piecewise-linear concave value functions.

V_n(x, y) is y times the optimal CVaR at level y plus the optimal expected
mean-channel cost, so V_n(x, .) is concave and non-decreasing on [0, 1].
The backups run on the expected-shortfall functions
W_n(x, s) = min E[Z1 + (Z - s)^+]: per (x, a) the successors' W are shifted
by the edge costs and averaged, the controller takes the pointwise minimum
over actions, and Q and V are the concave conjugates in s. The Nature's
mass transfer over the successors' V (build_transfer_instance) gives a lower
bound on Q that is tight whenever every successor's W is convex at the
optimal threshold.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

from cvarmdp.config import settings
from cvarmdp.exceptions import ConvergenceError, DomainError, ResourceGuardError
from cvarmdp.models.mdp import (
    AnySpec,
    CostShift,
    MdpSpec,
    RandomCostSpec,
    augment_random_costs,
    augmented_state_name,
    scale_mean_costs,
    shift_costs,
)
from cvarmdp.models.schemas import ObjectiveMode
from cvarmdp.services.nature import TransferInstance
from cvarmdp.services.pwl import (
    PwlConcave,
    evaluate,
    min_envelope,
    sup_distance,
    transform_successor,
)
from cvarmdp.services.shortfall import (
    ShortfallFunction,
    compact_shortfall,
    conjugate,
    evaluate_shortfall,
    min_shortfall,
    mix_shortfall,
    shift_shortfall,
    shortfall_distance,
)

logger = logging.getLogger(__name__)

StageV = Tuple[PwlConcave, ...]
StageQ = Tuple[Tuple[PwlConcave, ...], ...]
StageW = Tuple[ShortfallFunction, ...]
StateRef = Union[int, str]


@dataclass(frozen=True)
class ValueTables:
    """
    Solved V, Q and shortfall tables.

    `spec` is the cost-shifted spec the tables were built on and
    `source_spec` the MDP before shifting. `horizon` is None for an
    infinite-horizon solve; such tables hold the terminal stage and the
    converged stage, and every stage n >= 1 maps to the converged one.
    """
    spec: MdpSpec
    source_spec: MdpSpec
    horizon: Optional[int]
    v_stages: Tuple[StageV, ...]
    q_stages: Tuple[StageQ, ...]
    w_stages: Tuple[StageW, ...]
    cost_shift: CostShift = field(default_factory=CostShift)
    iterations: Optional[int] = None
    error_bound: Optional[float] = None
    tail_bound: Optional[float] = None
    residuals: Tuple[float, ...] = ()
    epsilon: Optional[float] = None
    initial_label: Optional[str] = None

    @property
    def is_infinite(self) -> bool:
        return self.horizon is None

    @property
    def last_stage(self) -> int:
        return len(self.v_stages) - 1

    def stage_index(self, n: int) -> int:
        if n < 0 or (self.horizon is not None and n > self.horizon):
            raise DomainError(f"stage {n} outside [0, {self.horizon if self.horizon is not None else 'inf'}]")
        return min(n, self.last_stage)

    def state_index(self, x: StateRef) -> int:
        if isinstance(x, int):
            if not 0 <= x < self.spec.n_states:
                raise DomainError(f"state index {x} out of range")
            return x
        if x not in self.spec.states and self.initial_label is not None:
            candidate = augmented_state_name(x, self.initial_label)
            if candidate in self.spec.states:
                return self.spec.state_index(candidate)
        return self.spec.state_index(x)

    def value_function(self, n: int, x: StateRef) -> PwlConcave:
        return self.v_stages[self.stage_index(n)][self.state_index(x)]

    def q_function(self, n: int, x: StateRef, a: Union[int, str]) -> PwlConcave:
        if n < 1:
            raise DomainError("Q is defined from stage 1 on")
        xi = self.state_index(x)
        ai = a if isinstance(a, int) else self.spec.action_index(xi, a)
        return self.q_stages[self.stage_index(n)][xi][ai]

    def shortfall(self, n: int, x: StateRef) -> ShortfallFunction:
        return self.w_stages[self.stage_index(n)][self.state_index(x)]

    def threshold_cost(self, n: int, x: StateRef, a: int, s: float) -> float:
        """G_n(x, a, s): expected shortfall above s of taking a now and acting optimally after"""
        if n < 1:
            raise DomainError("actions are taken from stage 1 on")
        xi = self.state_index(x)
        w_prev = self.w_stages[-1] if self.is_infinite else self.w_stages[self.stage_index(n - 1)]
        beta = self.spec.discount
        return math.fsum(
            tr.prob * (tr.mean_cost + beta * evaluate_shortfall(w_prev[tr.target], (s - tr.cvar_cost) / beta))
            for tr in self.spec.successors(xi, a)
        )

    def stage_segment_counts(self) -> List[int]:
        """Total V segments per stored stage"""
        return [sum(f.n_segments for f in stage) for stage in self.v_stages]


@dataclass(frozen=True)
class OptimalActionSet:
    stage: int
    state: int
    y: float
    actions: Tuple[int, ...]

    @property
    def first(self) -> int:
        return self.actions[0]


def expand_spec(spec: AnySpec) -> Tuple[MdpSpec, Optional[str]]:
    if isinstance(spec, RandomCostSpec):
        return augment_random_costs(spec), spec.initial_label
    return spec, None


def terminal_stage(spec: MdpSpec) -> StageV:
    """V_0(x, y) = v0_mean(x) + y v0(x)"""
    return tuple(
        PwlConcave.linear(spec.terminal_mean_cost[x], spec.terminal_cvar_cost[x])
        for x in range(spec.n_states)
    )


def terminal_shortfall(spec: MdpSpec) -> StageW:
    """W_0(x, s) = v0_mean(x) + (v0(x) - s)^+"""
    return tuple(
        ShortfallFunction.terminal(spec.terminal_mean_cost[x], spec.terminal_cvar_cost[x])
        for x in range(spec.n_states)
    )


def build_transfer_instance(spec: MdpSpec, v_prev: StageV, x: int, a: int) -> TransferInstance:
    """The Nature's mass-transfer problem over the successors' value functions"""
    edges = spec.successors(x, a)
    return TransferInstance(
        targets=tuple(tr.target for tr in edges),
        probabilities=tuple(tr.prob for tr in edges),
        functions=tuple(
            transform_successor(v_prev[tr.target], tr.mean_cost, tr.cvar_cost, spec.discount)
            for tr in edges
        ),
    )


def action_shortfall(spec: MdpSpec, w_prev: StageW, x: int, a: int) -> ShortfallFunction:
    """s -> sum over x' of p(x'|x,a) [c1 + beta W_prev(x', (s - c) / beta)]"""
    edges = spec.successors(x, a)
    return mix_shortfall(
        [tr.prob for tr in edges],
        [shift_shortfall(w_prev[tr.target], tr.mean_cost, tr.cvar_cost, spec.discount) for tr in edges],
    )


def _q_function(spec: MdpSpec, w_prev: StageW, x: int, a: int) -> Tuple[PwlConcave, ShortfallFunction]:
    g = action_shortfall(spec, w_prev, x, a)
    return conjugate(g), g


def backup(
    spec: MdpSpec,
    w_prev: StageW,
    parallel: Optional[bool] = None,
) -> Tuple[StageQ, StageV, StageW]:
    """
    One Bellman backup on the shortfall functions.

    Returns Q per (x, a) as the conjugate of the action's shortfall, V as the
    lower envelope of Q, and the next W as the pointwise minimum over actions,
    compacted by CVAR_SIMPLIFY_EPSILON when that is set.
    """
    pairs = list(spec.state_actions())
    use_pool = settings.parallel_backups if parallel is None else parallel
    if use_pool and len(pairs) > 1:
        with ThreadPoolExecutor(max_workers=settings.max_workers) as executor:
            flat = list(executor.map(lambda xa: _q_function(spec, w_prev, *xa), pairs))
    else:
        flat = [_q_function(spec, w_prev, x, a) for x, a in pairs]

    q_next: List[Tuple[PwlConcave, ...]] = []
    w_next: List[ShortfallFunction] = []
    k = 0
    for x in range(spec.n_states):
        n_actions = len(spec.actions[x])
        chunk = flat[k:k + n_actions]
        q_next.append(tuple(q for q, _ in chunk))
        w = min_shortfall([g for _, g in chunk])
        w_next.append(compact_shortfall(w, settings.simplify_epsilon))
        k += n_actions
    v_next = tuple(min_envelope(list(qs)) for qs in q_next)
    return tuple(q_next), v_next, tuple(w_next)


def _check_segment_cap(stage: int, q: StageQ, v: StageV, w: StageW) -> int:
    total = (
        sum(f.n_segments for f in v)
        + sum(f.n_segments for qs in q for f in qs)
        + sum(f.n_points for f in w)
    )
    if total > settings.segment_cap:
        logger.warning("stage %d holds %d segments (cap %d)", stage, total, settings.segment_cap)
        raise ResourceGuardError(
            f"stage {stage} needs {total} segments, above the cap of {settings.segment_cap}; "
            "set CVAR_SIMPLIFY_EPSILON to compact value functions"
        )
    return total


def solve_finite(spec: AnySpec, horizon: int, parallel: Optional[bool] = None) -> ValueTables:
    """Apply the backup `horizon` times from the terminal stage and keep every stage"""
    if not isinstance(horizon, int) or horizon < 1:
        raise DomainError(f"horizon must be a positive integer, got {horizon!r}")
    source, label = expand_spec(spec)
    shifted, shift = shift_costs(source, horizon)

    v_stages = [terminal_stage(shifted)]
    q_stages: List[StageQ] = [()]
    w_stages = [terminal_shortfall(shifted)]
    for n in range(1, horizon + 1):
        q, v, w = backup(shifted, w_stages[-1], parallel)
        total = _check_segment_cap(n, q, v, w)
        logger.info("stage %d: %d segments", n, total)
        q_stages.append(q)
        v_stages.append(v)
        w_stages.append(w)

    return ValueTables(
        spec=shifted,
        source_spec=source,
        horizon=horizon,
        v_stages=tuple(v_stages),
        q_stages=tuple(q_stages),
        w_stages=tuple(w_stages),
        cost_shift=shift,
        iterations=horizon,
        initial_label=label,
    )


def stage_distance(v: StageV, w: StageV) -> float:
    return max(sup_distance(f, g) for f, g in zip(v, w))


def shortfall_stage_distance(v: StageW, w: StageW) -> float:
    return max(shortfall_distance(f, g) for f, g in zip(v, w))


def solve_infinite(
    spec: AnySpec,
    epsilon: Optional[float] = None,
    parallel: Optional[bool] = None,
    max_iterations: Optional[int] = None,
) -> ValueTables:
    """
    Value iteration until successive shortfall stages are within
    epsilon (1 - beta) / beta, which bounds the distance of the last stage to
    the fixed point by epsilon. Conjugation does not increase sup distances,
    so the bound carries over to V. Compaction adds
    CVAR_SIMPLIFY_EPSILON / (1 - beta) to the recorded bound.
    """
    eps = settings.infinite_epsilon if epsilon is None else float(epsilon)
    limit = settings.max_iterations if max_iterations is None else max_iterations
    if not eps > 0:
        raise DomainError(f"epsilon must be positive, got {eps!r}")
    source, label = expand_spec(spec)
    beta = source.discount
    if not 0 < beta < 1:
        raise DomainError(f"infinite horizon requires discount in (0, 1), got {beta!r}")
    shifted, shift = shift_costs(source, None)

    threshold = eps * (1.0 - beta) / beta
    v0 = terminal_stage(shifted)
    w0 = terminal_shortfall(shifted)
    w = w0
    residuals: List[float] = []
    for n in range(1, limit + 1):
        q, v, w_next = backup(shifted, w, parallel)
        _check_segment_cap(n, q, v, w_next)
        residual = shortfall_stage_distance(w, w_next)
        residuals.append(residual)
        logger.debug("iteration %d: residual %.3e", n, residual)
        w = w_next
        if residual <= threshold:
            break
    else:
        logger.warning("no convergence after %d iterations (residual %.3e)", limit, residuals[-1])
        raise ConvergenceError(
            f"value iteration did not reach epsilon={eps!r} within {limit} iterations "
            f"(last residual {residuals[-1]!r})"
        )

    error_bound = (beta * residuals[-1] + settings.simplify_epsilon) / (1.0 - beta)
    tail_bound = shifted.cost_bound * beta ** n / (1.0 - beta)
    logger.info("converged after %d iterations, error bound %.3e", n, error_bound)
    return ValueTables(
        spec=shifted,
        source_spec=source,
        horizon=None,
        v_stages=(v0, v),
        q_stages=((), q),
        w_stages=(w0, w),
        cost_shift=shift,
        iterations=n,
        error_bound=error_bound,
        tail_bound=tail_bound,
        residuals=tuple(residuals),
        epsilon=eps,
        initial_label=label,
    )


def _solve_like(tables: ValueTables, spec: MdpSpec) -> ValueTables:
    if tables.horizon is None:
        return solve_infinite(spec, tables.epsilon)
    return solve_finite(spec, tables.horizon)


def _check_alpha(alpha: float, mode: ObjectiveMode) -> float:
    alpha = float(alpha)
    if math.isnan(alpha) or not 0 <= alpha <= 1:
        raise DomainError(f"alpha must lie in [0, 1], got {alpha!r}")
    if alpha == 0 and mode != ObjectiveMode.MEAN_PLUS_ALPHA_CVAR:
        raise DomainError(f"alpha=0 in {mode.value} mode is the worst-path game; use worst_path_value")
    return alpha


def mode_tables(tables: ValueTables, alpha: float, mode: ObjectiveMode) -> ValueTables:
    """
    Tables whose V and runner are optimal for `mode` at `alpha`: mean + CVaR
    re-solves with the mean channel scaled by alpha, every other case is
    `tables` itself.
    """
    if (
        ObjectiveMode(mode) == ObjectiveMode.MEAN_PLUS_CVAR
        and tables.source_spec.has_mean_costs
        and 0 < alpha < 1
    ):
        return _solve_like(tables, scale_mean_costs(tables.source_spec, alpha))
    return tables


def cvar_value(
    tables: ValueTables,
    x: StateRef,
    alpha: float,
    mode: ObjectiveMode = ObjectiveMode.PURE_CVAR,
) -> float:
    """Optimal objective at state x and level alpha, on the original cost scale"""
    mode = ObjectiveMode(mode)
    alpha = _check_alpha(alpha, mode)
    xi = tables.state_index(x)
    shift = tables.cost_shift
    n = tables.last_stage

    if mode == ObjectiveMode.PURE_CVAR:
        if tables.source_spec.has_mean_costs:
            raise DomainError("pure-cvar mode needs a spec without mean costs")
        return evaluate(tables.v_stages[n][xi], alpha) / alpha - shift.cvar_offset

    if mode == ObjectiveMode.MEAN_PLUS_ALPHA_CVAR:
        return evaluate(tables.v_stages[n][xi], alpha) - shift.mean_offset - alpha * shift.cvar_offset

    # mean + CVaR: the mean channel is scaled by alpha, so the value is divided by alpha
    scaled = mode_tables(tables, alpha, mode)
    value = evaluate(scaled.v_stages[scaled.last_stage][xi], alpha) / alpha
    return value - scaled.cost_shift.mean_offset / alpha - scaled.cost_shift.cvar_offset


def _iterate_to_fixed_point(update, initial: List[float], beta: float, epsilon: Optional[float]) -> List[float]:
    eps = settings.infinite_epsilon if epsilon is None else epsilon
    threshold = eps * (1.0 - beta) / beta
    w = initial
    for _ in range(settings.max_iterations):
        w_next = update(w)
        residual = max(abs(a - b) for a, b in zip(w, w_next))
        w = w_next
        if residual <= threshold:
            return w
    raise ConvergenceError(f"fixed-point iteration did not reach epsilon={eps!r}")


def worst_path_value(
    spec: AnySpec,
    horizon: Optional[int],
    epsilon: Optional[float] = None,
) -> Dict[str, float]:
    """
    Deterministic game value: the controller minimises and the Nature picks
    any positive-probability successor, with one-step cost c + E[c1].
    """
    mdp, _ = expand_spec(spec)
    beta = mdp.discount

    def update(w: List[float]) -> List[float]:
        return [
            min(
                max(tr.cvar_cost + mdp.expected_mean_cost(x, a) + beta * w[tr.target] for tr in mdp.successors(x, a))
                for a in range(len(mdp.actions[x]))
            )
            for x in range(mdp.n_states)
        ]

    w = [v + v1 for v, v1 in zip(mdp.terminal_cvar_cost, mdp.terminal_mean_cost)]
    if horizon is None:
        if not beta < 1:
            raise DomainError("infinite horizon requires discount < 1")
        w = _iterate_to_fixed_point(update, w, beta, epsilon)
    else:
        for _ in range(horizon):
            w = update(w)
    return dict(zip(mdp.states, w))


def risk_neutral_value(
    spec: AnySpec,
    horizon: Optional[int],
    epsilon: Optional[float] = None,
) -> Dict[str, float]:
    """Minimal expected total discounted cost with both channels combined"""
    mdp, _ = expand_spec(spec)
    beta = mdp.discount

    def update(w: List[float]) -> List[float]:
        return [
            min(
                math.fsum(tr.prob * (tr.cvar_cost + tr.mean_cost + beta * w[tr.target]) for tr in mdp.successors(x, a))
                for a in range(len(mdp.actions[x]))
            )
            for x in range(mdp.n_states)
        ]

    w = [v + v1 for v, v1 in zip(mdp.terminal_cvar_cost, mdp.terminal_mean_cost)]
    if horizon is None:
        if not beta < 1:
            raise DomainError("infinite horizon requires discount < 1")
        w = _iterate_to_fixed_point(update, w, beta, epsilon)
    else:
        for _ in range(horizon):
            w = update(w)
    return dict(zip(mdp.states, w))


def optimal_action_set(
    tables: ValueTables,
    t: int,
    x: StateRef,
    y: float,
    tolerance: Optional[float] = None,
) -> OptimalActionSet:
    """Actions whose Q_t(x, y, a) is within tolerance of V_t(x, y); never empty"""
    tau = settings.optimal_action_tolerance if tolerance is None else tolerance
    if t < 1:
        raise DomainError(f"stage {t} has no actions")
    xi = tables.state_index(x)
    n = tables.stage_index(t)
    v = evaluate(tables.v_stages[n][xi], y)
    limit = v + tau * max(1.0, abs(v))
    qs: Sequence[PwlConcave] = tables.q_stages[n][xi]
    values = [evaluate(q, y) for q in qs]
    actions = tuple(a for a, q in enumerate(values) if q <= limit)
    if not actions:
        actions = (min(range(len(values)), key=values.__getitem__),)
    return OptimalActionSet(stage=t, state=xi, y=float(y), actions=actions)


def threshold_action_set(
    tables: ValueTables,
    t: int,
    x: StateRef,
    s: float,
    tolerance: Optional[float] = None,
) -> Tuple[int, ...]:
    """Actions minimising the expected shortfall above threshold s at stage t; never empty"""
    tau = settings.optimal_action_tolerance if tolerance is None else tolerance
    xi = tables.state_index(x)
    values = [tables.threshold_cost(t, xi, a, s) for a in range(len(tables.spec.actions[xi]))]
    best = min(values)
    limit = best + tau * max(1.0, abs(best))
    return tuple(a for a, g in enumerate(values) if g <= limit)
