"""
Brute-force ground truth for desk-scale instances: exact outcome laws,
exact CVaR of discrete laws, exhaustive policy search, grid best responses
for the mass-transfer problem and seeded random instances.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from cvarmdp.config import settings
from cvarmdp.exceptions import CvarMdpError, DomainError, ResourceGuardError
from cvarmdp.models.mdp import (
    CostOutcome,
    MdpSpec,
    RandomCostSpec,
    RandomTransition,
    Transition,
)
from cvarmdp.models.schemas import ObjectiveMode
from cvarmdp.services.nature import TransferInstance
from cvarmdp.services.pwl import PwlConcave, evaluate

logger = logging.getLogger(__name__)

ATOM_TOLERANCE = 1e-12
History = Tuple[int, ...]


@dataclass(frozen=True)
class OutcomeDistribution:
    """Law of the total discounted cost Z, atoms sorted by value"""
    atoms: Tuple[Tuple[float, float], ...]
    expected_mean_cost: float = 0.0

    @classmethod
    def from_pairs(cls, pairs: Iterable[Tuple[float, float]], expected_mean_cost: float = 0.0) -> "OutcomeDistribution":
        ordered = sorted((float(z), float(p)) for z, p in pairs if p > 0)
        atoms: List[List[float]] = []
        for z, p in ordered:
            if atoms and z - atoms[-1][0] <= ATOM_TOLERANCE:
                atoms[-1][1] += p
            else:
                atoms.append([z, p])
        if not atoms:
            raise DomainError("a distribution needs at least one atom")
        return cls(tuple((z, p) for z, p in atoms), expected_mean_cost)

    @classmethod
    def from_samples(cls, samples: Sequence[float]) -> "OutcomeDistribution":
        if len(samples) == 0:
            raise DomainError("no samples")
        weight = 1.0 / len(samples)
        return cls.from_pairs((z, weight) for z in samples)

    @property
    def values(self) -> np.ndarray:
        return np.array([z for z, _ in self.atoms])

    @property
    def probabilities(self) -> np.ndarray:
        return np.array([p for _, p in self.atoms])

    @property
    def mean(self) -> float:
        return math.fsum(z * p for z, p in self.atoms)

    @property
    def maximum(self) -> float:
        return self.atoms[-1][0]


@dataclass(frozen=True)
class HistoryPolicy:
    """
    Nonrandomized history-dependent policy. Actions are keyed by the visited
    state sequence (x_0, ..., x_t); the action history is implied by it.
    """
    actions: Dict[History, int] = field(default_factory=dict)

    def action(self, history: History) -> int:
        try:
            return self.actions[history]
        except KeyError:
            raise DomainError(f"policy undefined at history {history}") from None

    def __len__(self) -> int:
        return len(self.actions)


# Exact outcome laws
def _state(spec: MdpSpec, x: Union[int, str]) -> int:
    return x if isinstance(x, int) else spec.state_index(x)


def enumerate_distribution(
    spec: MdpSpec,
    policy: HistoryPolicy,
    x0: Union[int, str],
    horizon: int,
) -> OutcomeDistribution:
    """Exact law of Z_N under the policy by full tree expansion; E[Z1_N] alongside"""
    beta = spec.discount
    pairs: List[Tuple[float, float]] = []
    mean_total = 0.0
    stack = [((_state(spec, x0),), 1.0, 0.0, 0.0)]
    while stack:
        history, prob, z, z1 = stack.pop()
        t = len(history) - 1
        x = history[-1]
        weight = beta ** t
        if t == horizon:
            pairs.append((z + weight * spec.terminal_cvar_cost[x], prob))
            mean_total += prob * (z1 + weight * spec.terminal_mean_cost[x])
            if len(pairs) > settings.max_trajectories:
                logger.warning("trajectory guard exceeded at %d leaves", len(pairs))
                raise ResourceGuardError(f"more than {settings.max_trajectories} trajectories")
            continue
        a = policy.action(history)
        for tr in reversed(spec.successors(x, a)):
            stack.append((
                history + (tr.target,),
                prob * tr.prob,
                z + weight * tr.cvar_cost,
                z1 + weight * tr.mean_cost,
            ))
    return OutcomeDistribution.from_pairs(pairs, mean_total)


def _tail_average(dist: OutcomeDistribution, alpha: float) -> float:
    remaining = alpha
    total = 0.0
    for z, p in reversed(dist.atoms):
        take = min(p, remaining)
        total += take * z
        remaining -= take
        if remaining <= 0:
            break
    return total / alpha


def cvar_by_minimization(dist: OutcomeDistribution, alpha: float) -> float:
    """min over atoms w of w + E[(Z - w)+] / alpha"""
    zs, ps = dist.values, dist.probabilities
    excess = np.maximum(zs[None, :] - zs[:, None], 0.0) @ ps
    return float(np.min(zs + excess / alpha))


def cvar_of_distribution(dist: OutcomeDistribution, alpha: float) -> float:
    """CVaR at level alpha: max atom at 0, mean at 1, tail average otherwise"""
    alpha = float(alpha)
    if not dist.atoms:
        raise DomainError("empty distribution")
    if math.isnan(alpha) or not 0 <= alpha <= 1:
        raise DomainError(f"alpha must lie in [0, 1], got {alpha!r}")
    if alpha == 0:
        return dist.maximum
    if alpha == 1:
        return dist.mean
    value = _tail_average(dist, alpha)
    check = cvar_by_minimization(dist, alpha)
    if abs(value - check) > 1e-9 * max(1.0, abs(value)):
        raise CvarMdpError(f"CVaR formulas disagree: tail average {value!r}, minimisation {check!r}")
    return value


def objective_of_distribution(dist: OutcomeDistribution, alpha: float, mode: ObjectiveMode) -> float:
    mode = ObjectiveMode(mode)
    cvar = cvar_of_distribution(dist, alpha)
    if mode == ObjectiveMode.PURE_CVAR:
        return cvar
    if mode == ObjectiveMode.MEAN_PLUS_ALPHA_CVAR:
        return dist.expected_mean_cost + alpha * cvar
    return dist.expected_mean_cost + cvar


# Exhaustive search
def count_policies(spec: MdpSpec, x0: Union[int, str], horizon: int) -> int:
    """Number of nonrandomized policies restricted to reachable histories"""
    memo: Dict[Tuple[int, int], int] = {}

    def count(x: int, t: int) -> int:
        if t == horizon:
            return 1
        key = (x, t)
        if key not in memo:
            memo[key] = sum(
                math.prod(count(tr.target, t + 1) for tr in spec.successors(x, a))
                for a in range(len(spec.actions[x]))
            )
        return memo[key]

    return count(_state(spec, x0), 0)


_Branch = Tuple[Tuple[Tuple[History, int], ...], Tuple[Tuple[float, float], ...], float]


def _subtree_policies(spec: MdpSpec, x: int, t: int, horizon: int) -> List[_Branch]:
    """All (policy fragment, relative cost law, mean cost) from node x at time t"""
    if t == horizon:
        return [((), ((spec.terminal_cvar_cost[x], 1.0),), spec.terminal_mean_cost[x])]
    beta = spec.discount
    branches: List[_Branch] = []
    for a in range(len(spec.actions[x])):
        edges = spec.successors(x, a)
        combos: List[_Branch] = [((((), a),), (), 0.0)]
        for tr in edges:
            children = _subtree_policies(spec, tr.target, t + 1, horizon)
            extended = []
            for fragment, atoms, mean in combos:
                for child_fragment, child_atoms, child_mean in children:
                    relabelled = tuple(((tr.target,) + h, act) for h, act in child_fragment)
                    extended.append((
                        fragment + relabelled,
                        atoms + tuple(
                            (tr.cvar_cost + beta * z, tr.prob * p) for z, p in child_atoms
                        ),
                        mean + tr.prob * (tr.mean_cost + beta * child_mean),
                    ))
            combos = extended
        branches.extend(combos)
    return branches


def _explicit_search(spec, x0, alpha, horizon, mode) -> Tuple[HistoryPolicy, float]:
    best_value = math.inf
    best_fragment = None
    for fragment, atoms, mean in _subtree_policies(spec, x0, 0, horizon):
        dist = OutcomeDistribution.from_pairs(atoms, mean)
        value = objective_of_distribution(dist, alpha, mode)
        if value < best_value - ATOM_TOLERANCE:
            best_value, best_fragment = value, fragment
    policy = HistoryPolicy({(x0,) + h: a for h, a in best_fragment})
    return policy, best_value


def _reachable_path_sums(spec: MdpSpec, x0: int, horizon: int) -> List[float]:
    beta = spec.discount
    sums = set()
    stack = [(x0, 0, 0.0)]
    leaves = 0
    while stack:
        x, t, z = stack.pop()
        if t == horizon:
            sums.add(round(z + beta ** t * spec.terminal_cvar_cost[x], 12))
            leaves += 1
            if leaves > settings.max_trajectories:
                raise ResourceGuardError(f"more than {settings.max_trajectories} trajectories")
            continue
        for a in range(len(spec.actions[x])):
            for tr in spec.successors(x, a):
                stack.append((tr.target, t + 1, z + beta ** t * tr.cvar_cost))
    return sorted(sums)


def _threshold_search(spec, x0, alpha, horizon, mode) -> Tuple[HistoryPolicy, float]:
    """
    Exact search through the threshold form of CVaR:
    min over w of k w + min over policies E[m Z1 + (k / alpha) (Z - w)+],
    with w ranging over all reachable path sums.
    """
    mean_weight, threshold_weight = {
        ObjectiveMode.PURE_CVAR: (0.0, 1.0),
        ObjectiveMode.MEAN_PLUS_ALPHA_CVAR: (1.0, alpha),
        ObjectiveMode.MEAN_PLUS_CVAR: (1.0, 1.0),
    }[mode]
    beta = spec.discount

    def solve(w: float):
        actions: Dict[History, int] = {}

        def node(history: History, z: float, z1: float) -> float:
            x, t = history[-1], len(history) - 1
            if t == horizon:
                weight = beta ** t
                total = z + weight * spec.terminal_cvar_cost[x]
                total1 = z1 + weight * spec.terminal_mean_cost[x]
                return mean_weight * total1 + threshold_weight / alpha * max(0.0, total - w)
            best, best_a = math.inf, 0
            for a in range(len(spec.actions[x])):
                value = math.fsum(
                    tr.prob * node(history + (tr.target,), z + beta ** t * tr.cvar_cost, z1 + beta ** t * tr.mean_cost)
                    for tr in spec.successors(x, a)
                )
                if value < best - ATOM_TOLERANCE:
                    best, best_a = value, a
            actions[history] = best_a
            return best

        return threshold_weight * w + node((x0,), 0.0, 0.0), actions

    best_value, best_actions = math.inf, {}
    for w in _reachable_path_sums(spec, x0, horizon):
        value, actions = solve(w)
        if value < best_value - ATOM_TOLERANCE:
            best_value, best_actions = value, actions
    return _restrict_to_reachable(spec, HistoryPolicy(best_actions), x0, horizon), best_value


def _restrict_to_reachable(spec: MdpSpec, policy: HistoryPolicy, x0: int, horizon: int) -> HistoryPolicy:
    kept: Dict[History, int] = {}
    stack = [(x0,)]
    while stack:
        history = stack.pop()
        if len(history) - 1 == horizon:
            continue
        a = policy.action(history)
        kept[history] = a
        stack.extend(history + (tr.target,) for tr in spec.successors(history[-1], a))
    return HistoryPolicy(kept)


def exhaustive_policy_search(
    spec: MdpSpec,
    x0: Union[int, str],
    alpha: float,
    horizon: int,
    mode: ObjectiveMode = ObjectiveMode.PURE_CVAR,
) -> Tuple[HistoryPolicy, float]:
    """
    Best nonrandomized history-dependent policy and its objective value.

    Policies are enumerated explicitly while their number stays within
    settings.max_policies; larger instances go through the threshold form
    of CVaR, which is exact but needs alpha > 0.
    """
    mode = ObjectiveMode(mode)
    alpha = float(alpha)
    if math.isnan(alpha) or not 0 <= alpha <= 1:
        raise DomainError(f"alpha must lie in [0, 1], got {alpha!r}")
    if horizon < 1:
        raise DomainError(f"horizon must be positive, got {horizon!r}")
    xi = _state(spec, x0)

    n_policies = count_policies(spec, xi, horizon)
    if n_policies <= settings.max_policies:
        logger.debug("enumerating %d policies", n_policies)
        return _explicit_search(spec, xi, alpha, horizon, mode)
    if alpha == 0:
        logger.warning("policy guard exceeded: %d policies", n_policies)
        raise ResourceGuardError(f"{n_policies} policies exceed the guard of {settings.max_policies}")
    logger.debug("%d policies; using the threshold search", n_policies)
    return _threshold_search(spec, xi, alpha, horizon, mode)


# Mass transfer on a grid
def grid_best_response(inst: TransferInstance, y: float, resolution: float = 1e-3) -> float:
    """
    Best allocation of y over a lattice of step `resolution`: the first k - 1
    successors take lattice amounts and the last one takes the remainder.
    A lower bound on F(y).
    """
    if inst.size > settings.max_grid_successors:
        raise ResourceGuardError(
            f"{inst.size} successors exceed the grid guard of {settings.max_grid_successors}"
        )
    if not 0 <= y <= 1:
        raise DomainError(f"tail level y={y!r} outside [0, 1]")
    if resolution <= 0:
        raise DomainError("resolution must be positive")
    probs = list(inst.probabilities)
    sources = [inst.source(k) for k in range(inst.size)]
    if y == 0:
        return math.fsum(v.value_at_zero for v in sources)
    if y == 1:
        return math.fsum(evaluate(v, v.domain_length) for v in sources)

    steps = int(math.floor(y / resolution + 1e-9))
    best = np.zeros(1)
    for k in range(inst.size - 1):
        cap = min(steps, int(math.floor(probs[k] / resolution + 1e-9)))
        grid = evaluate(sources[k], np.minimum(np.arange(cap + 1) * resolution, sources[k].domain_length))
        size = min(steps, best.size - 1 + cap) + 1
        merged = np.full(size, -np.inf)
        for j in range(cap + 1):
            span = min(best.size, size - j)
            if span <= 0:
                break
            np.maximum(merged[j:j + span], best[:span] + grid[j], out=merged[j:j + span])
        best = merged

    last = sources[-1]
    remainder = y - np.arange(best.size) * resolution
    feasible = (remainder >= -1e-12) & (remainder <= last.domain_length + 1e-12)
    if not np.any(feasible & np.isfinite(best)):
        return -math.inf
    values = best[feasible] + evaluate(last, np.clip(remainder[feasible], 0.0, last.domain_length))
    return float(np.max(values))


# Random instances
def _dyadic_split(rng: np.random.Generator, parts: int, units: int = 8) -> List[float]:
    cuts = np.sort(rng.choice(np.arange(1, units), size=parts - 1, replace=False)) if parts > 1 else np.array([], dtype=int)
    sizes = np.diff(np.concatenate(([0], cuts, [units])))
    return [int(s) / units for s in sizes]


def _random_rows(rng: np.random.Generator, n_states: int, max_actions: int):
    rows = {}
    for x in range(n_states):
        for a in range(int(rng.integers(1, max_actions + 1))):
            k = int(rng.integers(1, n_states + 1))
            targets = sorted(rng.choice(n_states, size=k, replace=False).tolist())
            rows[(x, a)] = list(zip(targets, _dyadic_split(rng, k)))
    return rows


def random_spec(
    rng: np.random.Generator,
    n_states: Optional[int] = None,
    max_actions: int = 2,
    discount: Optional[float] = None,
    mean_costs: bool = False,
    terminal_costs: bool = False,
) -> MdpSpec:
    """Small MDP with integer costs in [0, 10] and dyadic probabilities"""
    n = int(rng.integers(1, 4)) if n_states is None else n_states
    beta = float(rng.choice([0.5, 0.75, 1.0])) if discount is None else discount
    rows = _random_rows(rng, n, max_actions)
    transitions = {
        key: tuple(
            Transition(
                target=target,
                prob=prob,
                cvar_cost=float(rng.integers(0, 11)),
                mean_cost=float(rng.integers(0, 11)) if mean_costs else 0.0,
            )
            for target, prob in row
        )
        for key, row in rows.items()
    }
    n_actions = [sum(1 for (x, _) in rows if x == s) for s in range(n)]
    return MdpSpec(
        states=tuple(f"s{x}" for x in range(n)),
        actions=tuple(tuple(f"a{a}" for a in range(n_actions[x])) for x in range(n)),
        discount=beta,
        terminal_cvar_cost=tuple(float(rng.integers(0, 11)) if terminal_costs else 0.0 for _ in range(n)),
        terminal_mean_cost=tuple(0.0 for _ in range(n)),
        transitions=transitions,
    )


def random_random_cost_spec(
    rng: np.random.Generator,
    n_states: Optional[int] = None,
    max_actions: int = 2,
    max_outcomes: int = 2,
    discount: Optional[float] = None,
) -> RandomCostSpec:
    """Small MDP whose edge costs are drawn from labelled dyadic outcome lists"""
    n = int(rng.integers(1, 3)) if n_states is None else n_states
    beta = float(rng.choice([0.5, 1.0])) if discount is None else discount
    rows = _random_rows(rng, n, max_actions)
    labels = [f"w{k}" for k in range(max_outcomes)]
    transitions = {}
    for key, row in rows.items():
        edges = []
        for target, prob in row:
            k = int(rng.integers(1, max_outcomes + 1))
            chosen = sorted(rng.choice(max_outcomes, size=k, replace=False).tolist())
            outcomes = tuple(
                CostOutcome(labels[j], float(rng.integers(0, 11)), q)
                for j, q in zip(chosen, _dyadic_split(rng, k, units=4))
            )
            edges.append(RandomTransition(target, prob, outcomes))
        transitions[key] = tuple(edges)
    n_actions = [sum(1 for (x, _) in rows if x == s) for s in range(n)]
    return RandomCostSpec(
        states=tuple(f"s{x}" for x in range(n)),
        actions=tuple(tuple(f"a{a}" for a in range(n_actions[x])) for x in range(n)),
        discount=beta,
        terminal_cvar_cost=tuple(0.0 for _ in range(n)),
        terminal_mean_cost=tuple(0.0 for _ in range(n)),
        transitions=transitions,
    )


def random_pwl(
    rng: np.random.Generator,
    max_segments: int = 4,
    domain_length: float = 1.0,
    max_slope: float = 10.0,
) -> PwlConcave:
    """Concave non-decreasing function with integer slopes and random breakpoints"""
    k = int(rng.integers(1, max_segments + 1))
    slopes = np.sort(rng.choice(np.arange(0, int(max_slope) + 1), size=min(k, int(max_slope) + 1), replace=False))[::-1]
    cuts = np.sort(rng.uniform(0.0, domain_length, size=slopes.size - 1))
    lengths = np.diff(np.concatenate(([0.0], cuts, [domain_length])))
    return PwlConcave.from_segments(
        float(rng.integers(0, 5)),
        zip(slopes.astype(float).tolist(), lengths.tolist()),
        domain_length=domain_length,
    )


def random_transfer_instance(
    rng: np.random.Generator,
    max_successors: int = 4,
    max_segments: int = 4,
    max_slope: float = 10.0,
) -> TransferInstance:
    k = int(rng.integers(1, max_successors + 1))
    return TransferInstance(
        targets=tuple(range(k)),
        probabilities=tuple(_dyadic_split(rng, k)),
        functions=tuple(random_pwl(rng, max_segments, 1.0, max_slope) for _ in range(k)),
    )
