"""
Online execution of the optimal CVaR policy.

The runner tracks a cost threshold u: it starts as a one-sided derivative of
the chosen Q at alpha and is carried forward as u' = (u - c) / beta after
each observed transition. Actions minimise the expected shortfall above u,
which reproduces the optimal value exactly. The tail level the Nature
assigned to each successor is reported by inverting the superdifferential of
the successor's value function at u'; when the inversion is ambiguous (the
value function is linear there) the report is the interval and its midpoint.
"""
import csv
import logging
import math
from dataclasses import dataclass
from typing import IO, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from cvarmdp.config import settings
from cvarmdp.exceptions import DomainError, InfeasibleTraceError, ResourceGuardError
from cvarmdp.models.schemas import DerivativeSide
from cvarmdp.services.nature import build_F, optimal_allocation
from cvarmdp.services.oracle import HistoryPolicy, OutcomeDistribution, cvar_of_distribution
from cvarmdp.services.pwl import (
    LinearInterval,
    evaluate,
    format_number,
    invert_superdifferential,
    left_deriv,
    right_deriv,
)
from cvarmdp.services.solver import (
    ValueTables,
    build_transfer_instance,
    optimal_action_set,
    threshold_action_set,
)

logger = logging.getLogger(__name__)

TRACE_COLUMNS = [
    "t", "state", "action", "y_lo", "y_hi", "y_chosen", "u", "step_cost", "cumulative_discounted_cost",
]


@dataclass(frozen=True)
class KnownRisk:
    y: float

    @property
    def lo(self) -> float:
        return self.y

    @property
    def hi(self) -> float:
        return self.y

    def contains(self, y: float, tolerance: float = 1e-9) -> bool:
        return abs(y - self.y) <= tolerance


@dataclass(frozen=True)
class IntervalRisk:
    """Tail level known only up to an interval on which V is linear; y is the working point"""
    lo: float
    hi: float
    y: float

    def contains(self, y: float, tolerance: float = 1e-9) -> bool:
        return self.lo - tolerance <= y <= self.hi + tolerance


Risk = Union[KnownRisk, IntervalRisk]


@dataclass(frozen=True)
class RunnerState:
    t: int
    state: int
    risk: Risk
    u: float
    action: Optional[int]

    @property
    def informed(self) -> bool:
        """The knowledge flag: the tail level is known exactly"""
        return isinstance(self.risk, KnownRisk)


@dataclass(frozen=True)
class TraceStep:
    t: int
    state: str
    action: str
    y_lo: float
    y_hi: float
    y_chosen: float
    u: float
    step_cost: float
    cumulative_discounted_cost: float


@dataclass(frozen=True)
class Trajectory:
    steps: Tuple[TraceStep, ...]
    states: Tuple[int, ...]
    error_bound: Optional[float] = None

    @property
    def total_cost(self) -> float:
        return self.steps[-1].cumulative_discounted_cost if self.steps else 0.0


class AlgorithmCvarRunner:
    """Executes the optimal policy for one (x0, alpha) on solved tables"""

    def __init__(
        self,
        tables: ValueTables,
        side: DerivativeSide = DerivativeSide.RIGHT,
        tolerance: Optional[float] = None,
    ):
        self.tables = tables
        self.spec = tables.spec
        self.side = DerivativeSide(side)
        self.tolerance = settings.superdiff_tolerance if tolerance is None else tolerance
        self.n_steps = tables.horizon if tables.horizon is not None else infinite_step_count(tables)

    def stage(self, t: int) -> int:
        """Stage index of the value function in force at time t"""
        if self.tables.horizon is None:
            return 1
        return self.tables.horizon - t

    def _seed_u(self, t: int, x: int, a: int, y: float) -> float:
        q = self.tables.q_function(self.stage(t), x, a)
        if self.side == DerivativeSide.LEFT:
            return left_deriv(q, y)
        return right_deriv(q, y)

    def _choose(self, t: int, x: int, y: float) -> Optional[int]:
        if t >= self.n_steps:
            return None
        return optimal_action_set(self.tables, self.stage(t), x, y).first

    def _choose_for_threshold(self, t: int, x: int, u: float) -> Optional[int]:
        if t >= self.n_steps:
            return None
        return threshold_action_set(self.tables, self.stage(t), x, u)[0]

    def init(self, x0: Union[int, str], alpha: float) -> RunnerState:
        alpha = float(alpha)
        if math.isnan(alpha) or not 0 < alpha <= 1:
            raise DomainError(f"alpha must lie in (0, 1] for the runner, got {alpha!r}; use the worst-path game at 0")
        x = self.tables.state_index(x0)
        a = self._choose(0, x, alpha)
        u = self._seed_u(0, x, a, alpha) if a is not None else 0.0
        return RunnerState(t=0, state=x, risk=KnownRisk(alpha), u=u, action=a)

    def _recover(self, t: int, x_next: int, u_next: float) -> Risk:
        """Tail level at x_next where u_next supports its value function"""
        v = self.tables.value_function(self.stage(t + 1), x_next)
        if math.isinf(u_next):
            return KnownRisk(0.0)
        if u_next < -self.tolerance * max(1.0, abs(u_next)):
            # a negative threshold means the successor got its full mass
            return KnownRisk(1.0)
        found = invert_superdifferential(v, u_next, self.tolerance)
        if isinstance(found, LinearInterval):
            return IntervalRisk(found.lo, found.hi, found.midpoint)
        return KnownRisk(found.y)

    def step(self, state: RunnerState, observed_next: Union[int, str]) -> RunnerState:
        if state.action is None:
            raise DomainError(f"no action at t={state.t}; the run has ended")
        x_next = self.tables.state_index(observed_next)
        tr = self.spec.transition(state.state, state.action, x_next)
        if tr is None:
            raise InfeasibleTraceError(
                f"transition {self.spec.states[state.state]} -> {self.spec.states[x_next]} under "
                f"{self.spec.actions[state.state][state.action]} has zero probability (t={state.t})"
            )
        u = (state.u - tr.cvar_cost) / self.spec.discount
        t = state.t + 1
        risk = self._recover(state.t, x_next, u)
        a = self._choose_for_threshold(t, x_next, u)
        return RunnerState(t=t, state=x_next, risk=risk, u=float(u), action=a)


def infinite_step_count(tables: ValueTables, cutoff: Optional[float] = None) -> int:
    """Steps until beta^t C / (1 - beta) falls below the cutoff"""
    limit = settings.runner_cutoff if cutoff is None else cutoff
    beta = tables.spec.discount
    scale = tables.spec.cost_bound / (1.0 - beta)
    if scale <= limit:
        return 1
    return max(1, int(math.ceil(math.log(limit / scale) / math.log(beta))))


def _step_row(tables: ValueTables, state: RunnerState, cost: float, cumulative: float) -> TraceStep:
    spec = tables.spec
    return TraceStep(
        t=state.t,
        state=spec.states[state.state],
        action=spec.actions[state.state][state.action] if state.action is not None else "",
        y_lo=state.risk.lo,
        y_hi=state.risk.hi,
        y_chosen=state.risk.y,
        u=state.u,
        step_cost=cost,
        cumulative_discounted_cost=cumulative,
    )


def _original_cost(tables: ValueTables, x: int, a: int, x_next: int) -> float:
    tr = tables.source_spec.transition(x, a, x_next)
    return tr.cvar_cost + tr.mean_cost


def run_trajectory(
    tables: ValueTables,
    x0: Union[int, str],
    alpha: float,
    side: DerivativeSide = DerivativeSide.RIGHT,
    path: Optional[Sequence[Union[int, str]]] = None,
    rng: Optional[np.random.Generator] = None,
    seed: Optional[int] = None,
) -> Trajectory:
    """
    Run the policy from x0 at level alpha. Successors come from `path` (which
    starts with x0) when given, otherwise they are sampled from p with `rng`
    or a generator seeded by `seed`. Costs in the trace are on the original
    scale; the final row carries the terminal cost.
    """
    runner = AlgorithmCvarRunner(tables, side)
    state = runner.init(x0, alpha)
    beta = tables.spec.discount
    source = tables.source_spec

    if path is not None:
        observed = [tables.state_index(x) for x in path]
        if not observed or observed[0] != state.state:
            raise InfeasibleTraceError(f"trace must start at {tables.spec.states[state.state]}")
        observed = observed[1:]
        if len(observed) > runner.n_steps:
            raise InfeasibleTraceError(f"trace longer than the horizon {runner.n_steps}")
    else:
        rng = rng if rng is not None else np.random.default_rng(seed)
        observed = None

    steps: List[TraceStep] = []
    states = [state.state]
    cumulative = 0.0
    t = 0
    while state.action is not None:
        if observed is not None:
            if t >= len(observed):
                break
            x_next = observed[t]
        else:
            edges = tables.spec.successors(state.state, state.action)
            pick = rng.choice(len(edges), p=np.array([tr.prob for tr in edges]))
            x_next = edges[int(pick)].target
        next_state = runner.step(state, x_next)
        cost = _original_cost(tables, state.state, state.action, x_next)
        cumulative += beta ** t * cost
        steps.append(_step_row(tables, state, cost, cumulative))
        states.append(x_next)
        state = next_state
        t += 1

    terminal = 0.0
    if tables.horizon is not None and state.t == tables.horizon:
        terminal = source.terminal_cvar_cost[state.state] + source.terminal_mean_cost[state.state]
        cumulative += beta ** state.t * terminal
    steps.append(_step_row(tables, state, terminal, cumulative))
    return Trajectory(steps=tuple(steps), states=tuple(states), error_bound=tables.error_bound)


def simulate(
    tables: ValueTables,
    x0: Union[int, str],
    alpha: float,
    episodes: int,
    seed: Optional[int] = None,
    side: DerivativeSide = DerivativeSide.RIGHT,
) -> List[Trajectory]:
    """Independent sampled episodes, one seed stream per episode"""
    if episodes < 1:
        raise DomainError("episodes must be positive")
    if episodes > settings.max_trajectories:
        raise ResourceGuardError(f"{episodes} episodes exceed the guard of {settings.max_trajectories}")
    streams = np.random.SeedSequence(seed).spawn(episodes)
    return [
        run_trajectory(tables, x0, alpha, side, rng=np.random.default_rng(stream))
        for stream in streams
    ]


def empirical_cvar(costs: Sequence[float], alpha: float) -> float:
    """CVaR of the empirical law of sampled costs"""
    return cvar_of_distribution(OutcomeDistribution.from_samples(list(costs)), alpha)


def induced_history_policy(
    tables: ValueTables,
    x0: Union[int, str],
    alpha: float,
    side: DerivativeSide = DerivativeSide.RIGHT,
) -> HistoryPolicy:
    """The history-dependent policy the runner implements over all reachable histories"""
    runner = AlgorithmCvarRunner(tables, side)
    root = runner.init(x0, alpha)
    actions = {}
    stack = [((root.state,), root)]
    while stack:
        history, state = stack.pop()
        if state.action is None:
            continue
        actions[history] = state.action
        for tr in tables.spec.successors(state.state, state.action):
            stack.append((history + (tr.target,), runner.step(state, tr.target)))
    return HistoryPolicy(actions)


@dataclass(frozen=True)
class TailLevelRecord:
    """Runner bookkeeping next to the Nature's true tail level at one time step"""
    t: int
    state: int
    true_y: float
    risk: Risk
    u: float
    incoming_u: float


def nature_tail_levels(
    tables: ValueTables,
    x0: Union[int, str],
    alpha: float,
    path: Sequence[Union[int, str]],
    side: DerivativeSide = DerivativeSide.RIGHT,
) -> List[TailLevelRecord]:
    """
    Replay a path and track the true tail levels y_{t+1} = y_t b*(x_{t+1})
    from the Nature's optimal allocation at the true y_t.

    The allocation only describes the optimal policy while the Nature's
    transfer value equals Q at the true level; the replay stops at the first
    step where it falls short.
    """
    runner = AlgorithmCvarRunner(tables, side)
    state = runner.init(x0, alpha)
    observed = [tables.state_index(x) for x in path]
    if not observed or observed[0] != state.state:
        raise InfeasibleTraceError("path must start at the initial state")
    tau = settings.optimal_action_tolerance
    true_y = float(alpha)
    records = [TailLevelRecord(0, state.state, true_y, state.risk, state.u, math.nan)]
    for x_next in observed[1:]:
        if state.action is None:
            break
        v_prev = tables.v_stages[tables.stage_index(runner.stage(state.t + 1))]
        inst = build_transfer_instance(tables.spec, v_prev, state.state, state.action)
        if x_next not in inst.targets:
            raise InfeasibleTraceError(f"zero-probability transition to {tables.spec.states[x_next]}")
        q = evaluate(tables.q_function(runner.stage(state.t), state.state, state.action), true_y)
        if q - evaluate(build_F(inst), true_y) > tau * max(1.0, abs(q)):
            logger.debug("transfer bound not tight at t=%d y=%r; tail levels stop here", state.t, true_y)
            break
        true_y = optimal_allocation(inst, true_y).level(x_next)
        tr = tables.spec.transition(state.state, state.action, x_next)
        incoming = (state.u - tr.cvar_cost) / tables.spec.discount
        state = runner.step(state, x_next)
        records.append(TailLevelRecord(state.t, state.state, true_y, state.risk, state.u, incoming))
    return records


def write_trace_csv(trajectory: Trajectory, stream: IO[str]) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(TRACE_COLUMNS)
    for row in trajectory.steps:
        writer.writerow([
            row.t,
            row.state,
            row.action,
            format_number(row.y_lo),
            format_number(row.y_hi),
            format_number(row.y_chosen),
            format_number(row.u),
            format_number(row.step_cost),
            format_number(row.cumulative_discounted_cost),
        ])


def iter_reachable_paths(
    tables: ValueTables,
    x0: Union[int, str],
    alpha: float,
    side: DerivativeSide = DerivativeSide.RIGHT,
) -> Iterator[Tuple[int, ...]]:
    """Every full state path the runner's policy can produce"""
    policy = induced_history_policy(tables, x0, alpha, side)
    root = (tables.state_index(x0),)
    stack = [root]
    while stack:
        history = stack.pop()
        if history not in policy.actions:
            yield history
            continue
        for tr in tables.spec.successors(history[-1], policy.actions[history]):
            stack.append(history + (tr.target,))
