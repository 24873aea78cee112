"""
Finite MDP problem instances: definition, validation, ingestion, cost
normalisation and the random-cost state augmentation.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, Iterator, List, Mapping, Optional, Tuple, Union

from pydantic import ValidationError

from cvarmdp.config import settings
from cvarmdp.exceptions import DomainError, SpecValidationError
from cvarmdp.models.schemas import MdpDocument, OutcomeEntry, TransitionEntry

logger = logging.getLogger(__name__)

AUGMENTED_SEPARATOR = "|"


@dataclass(frozen=True)
class Transition:
    """Positive-probability edge x -> target under some action"""
    target: int
    prob: float
    cvar_cost: float
    mean_cost: float = 0.0


@dataclass(frozen=True)
class CostOutcome:
    label: str
    cost: float
    prob: float


@dataclass(frozen=True)
class RandomTransition:
    """Edge whose CVaR cost is drawn from a finite outcome list"""
    target: int
    prob: float
    outcomes: Tuple[CostOutcome, ...]
    mean_cost: float = 0.0


@dataclass(frozen=True)
class _SpecBase:
    states: Tuple[str, ...]
    actions: Tuple[Tuple[str, ...], ...]
    discount: float
    terminal_cvar_cost: Tuple[float, ...]
    terminal_mean_cost: Tuple[float, ...]

    @property
    def n_states(self) -> int:
        return len(self.states)

    def state_index(self, name: str) -> int:
        try:
            return self.states.index(name)
        except ValueError:
            raise DomainError(f"unknown state {name!r}") from None

    def action_index(self, x: int, name: str) -> int:
        try:
            return self.actions[x].index(name)
        except ValueError:
            raise DomainError(f"unknown action {name!r} at state {self.states[x]!r}") from None

    def state_actions(self) -> Iterator[Tuple[int, int]]:
        for x, names in enumerate(self.actions):
            for a in range(len(names)):
                yield x, a


@dataclass(frozen=True)
class MdpSpec(_SpecBase):
    """Finite MDP with CVaR costs c, mean costs c1, terminal costs and discount"""
    transitions: Mapping[Tuple[int, int], Tuple[Transition, ...]] = field(default_factory=dict)

    def successors(self, x: int, a: int) -> Tuple[Transition, ...]:
        return self.transitions[(x, a)]

    def transition(self, x: int, a: int, target: int) -> Optional[Transition]:
        for tr in self.transitions[(x, a)]:
            if tr.target == target:
                return tr
        return None

    def transition_prob(self, x: int, a: int, target: int) -> float:
        tr = self.transition(x, a, target)
        return tr.prob if tr is not None else 0.0

    @property
    def has_mean_costs(self) -> bool:
        return any(v != 0 for v in self.terminal_mean_cost) or any(
            tr.mean_cost != 0 for trs in self.transitions.values() for tr in trs
        )

    @property
    def cost_bound(self) -> float:
        """Largest one-step cost magnitude, both channels combined"""
        return max(
            (abs(tr.cvar_cost) + abs(tr.mean_cost) for trs in self.transitions.values() for tr in trs),
            default=0.0,
        )

    def expected_mean_cost(self, x: int, a: int) -> float:
        return sum(tr.prob * tr.mean_cost for tr in self.transitions[(x, a)])


@dataclass(frozen=True)
class RandomCostSpec(_SpecBase):
    """Finite MDP whose CVaR costs are random with finite support per edge"""
    transitions: Mapping[Tuple[int, int], Tuple[RandomTransition, ...]] = field(default_factory=dict)

    @property
    def outcome_labels(self) -> Tuple[str, ...]:
        """Union of outcome labels in declaration order"""
        labels: List[str] = []
        for trs in self.transitions.values():
            for tr in trs:
                for o in tr.outcomes:
                    if o.label not in labels:
                        labels.append(o.label)
        return tuple(labels)

    @property
    def initial_label(self) -> str:
        return self.outcome_labels[0]


AnySpec = Union[MdpSpec, RandomCostSpec]


@dataclass(frozen=True)
class CostShift:
    """Uniform cost increase per channel and the objective offsets it induces"""
    cvar_shift: float = 0.0
    mean_shift: float = 0.0
    cvar_offset: float = 0.0
    mean_offset: float = 0.0

    @property
    def is_identity(self) -> bool:
        return self.cvar_shift == 0 and self.mean_shift == 0


# Ingestion
def _location(entry: TransitionEntry) -> str:
    return f"({entry.from_state}, {entry.action})"


def _load_document(document: Union[str, bytes, Mapping[str, Any], MdpDocument]) -> MdpDocument:
    if isinstance(document, MdpDocument):
        return document
    try:
        if isinstance(document, (str, bytes)):
            return MdpDocument.model_validate_json(document)
        return MdpDocument.model_validate(document)
    except ValidationError as e:
        first = e.errors()[0]
        location = ".".join(str(part) for part in first.get("loc", ()))
        raise SpecValidationError(first.get("msg", str(e)), location or "document") from e


def _check_probability_row(total: float, location: str, tolerance: float) -> None:
    if abs(total - 1.0) > tolerance:
        raise SpecValidationError(f"probabilities sum to {total!r}, expected 1", location)


def parse_spec(
    document: Union[str, bytes, Mapping[str, Any], MdpDocument],
    tolerance: Optional[float] = None,
) -> AnySpec:
    """
    Parse and validate an MDP document.

    Returns an MdpSpec, or a RandomCostSpec when any edge carries an outcome
    list. Identifiers are resolved to dense indices in declaration order;
    zero-probability edges are dropped and rows within tolerance of 1 are
    renormalised.
    """
    tol = settings.prob_tolerance if tolerance is None else tolerance
    doc = _load_document(document)

    states = tuple(doc.states)
    if len(set(states)) != len(states):
        raise SpecValidationError("duplicate state identifiers", "states")
    index = {name: i for i, name in enumerate(states)}

    for name in doc.actions:
        if name not in index:
            raise SpecValidationError(f"unknown state {name!r}", f"actions.{name}")
    actions: List[Tuple[str, ...]] = []
    for name in states:
        names = tuple(doc.actions.get(name, ()))
        if not names:
            raise SpecValidationError("action set must be non-empty", f"actions.{name}")
        if len(set(names)) != len(names):
            raise SpecValidationError("duplicate action identifiers", f"actions.{name}")
        actions.append(names)

    if not (0 < doc.discount <= 1) or not math.isfinite(doc.discount):
        raise SpecValidationError(f"discount must lie in (0, 1], got {doc.discount!r}", "discount")

    terminal = []
    for key in ("terminal_cvar_cost", "terminal_mean_cost"):
        values = getattr(doc, key)
        for name in values:
            if name not in index:
                raise SpecValidationError(f"unknown state {name!r}", f"{key}.{name}")
        terminal.append(tuple(float(values.get(name, 0.0)) for name in states))

    randomised = any(entry.outcomes is not None for entry in doc.transitions)
    rows: Dict[Tuple[int, int], List[Tuple[TransitionEntry, int]]] = {
        (x, a): [] for x in range(len(states)) for a in range(len(actions[x]))
    }
    for entry in doc.transitions:
        location = _location(entry)
        if entry.from_state not in index:
            raise SpecValidationError(f"unknown state {entry.from_state!r}", location)
        if entry.to not in index:
            raise SpecValidationError(f"unknown target state {entry.to!r}", location)
        x = index[entry.from_state]
        if entry.action not in actions[x]:
            raise SpecValidationError(f"action {entry.action!r} not available", location)
        if entry.prob < 0 or not math.isfinite(entry.prob):
            raise SpecValidationError(f"negative probability {entry.prob!r} to {entry.to!r}", location)
        row = rows[(x, actions[x].index(entry.action))]
        target = index[entry.to]
        if any(t == target for _, t in row):
            raise SpecValidationError(f"duplicate transition to {entry.to!r}", location)
        row.append((entry, target))

    transitions: Dict[Tuple[int, int], tuple] = {}
    for (x, a), row in rows.items():
        location = f"({states[x]}, {actions[x][a]})"
        total = sum(entry.prob for entry, _ in row)
        _check_probability_row(total, location, tol)
        edges = []
        for entry, target in row:
            if entry.prob == 0:
                continue
            prob = entry.prob / total
            if randomised:
                edges.append(RandomTransition(target, prob, _outcomes(entry, location, tol), entry.mean_cost))
            else:
                edges.append(Transition(target, prob, float(entry.cvar_cost), entry.mean_cost))
        transitions[(x, a)] = tuple(edges)

    cls = RandomCostSpec if randomised else MdpSpec
    spec = cls(
        states=states,
        actions=tuple(actions),
        discount=float(doc.discount),
        terminal_cvar_cost=terminal[0],
        terminal_mean_cost=terminal[1],
        transitions=transitions,
    )
    logger.debug("parsed %s with %d states", cls.__name__, spec.n_states)
    return spec


def _outcomes(entry: TransitionEntry, location: str, tolerance: float) -> Tuple[CostOutcome, ...]:
    raw = entry.outcomes if entry.outcomes is not None else [OutcomeEntry(cost=entry.cvar_cost, prob=1.0)]
    edge = f"{location} -> {entry.to}"
    labels = [o.label if o.label is not None else str(k) for k, o in enumerate(raw)]
    if len(set(labels)) != len(labels):
        raise SpecValidationError("duplicate outcome labels", edge)
    for o in raw:
        if o.prob < 0:
            raise SpecValidationError(f"negative outcome probability {o.prob!r}", edge)
    total = sum(o.prob for o in raw)
    _check_probability_row(total, edge, tolerance)
    return tuple(
        CostOutcome(label, float(o.cost), o.prob / total)
        for label, o in zip(labels, raw)
        if o.prob > 0
    )


def load_spec(path: Union[str, Path], tolerance: Optional[float] = None) -> AnySpec:
    """Read and parse an MDP document file"""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise SpecValidationError(f"cannot read MDP document: {e}", str(path)) from e
    return parse_spec(text, tolerance)


def spec_to_document(spec: AnySpec) -> Dict[str, Any]:
    """Serialise a spec back into the MDP document layout"""
    transitions = []
    for (x, a), edges in spec.transitions.items():
        for tr in edges:
            entry: Dict[str, Any] = {
                "from": spec.states[x],
                "action": spec.actions[x][a],
                "to": spec.states[tr.target],
                "prob": tr.prob,
                "mean_cost": tr.mean_cost,
            }
            if isinstance(tr, RandomTransition):
                entry["outcomes"] = [{"cost": o.cost, "prob": o.prob, "label": o.label} for o in tr.outcomes]
            else:
                entry["cvar_cost"] = tr.cvar_cost
            transitions.append(entry)
    return {
        "states": list(spec.states),
        "actions": {name: list(spec.actions[x]) for x, name in enumerate(spec.states)},
        "discount": spec.discount,
        "transitions": transitions,
        "terminal_cvar_cost": dict(zip(spec.states, spec.terminal_cvar_cost)),
        "terminal_mean_cost": dict(zip(spec.states, spec.terminal_mean_cost)),
    }


def dumps_spec(spec: AnySpec) -> str:
    return json.dumps(spec_to_document(spec), indent=2)


# Normalisation
def horizon_factor(discount: float, horizon: Optional[int]) -> float:
    """Total discount weight of one-step plus terminal costs over the horizon"""
    if horizon is None:
        if discount >= 1:
            raise DomainError("infinite horizon requires discount < 1")
        return 1.0 / (1.0 - discount)
    if discount == 1:
        return float(horizon + 1)
    return (1.0 - discount ** (horizon + 1)) / (1.0 - discount)


def shift_costs(spec: MdpSpec, horizon: Optional[int]) -> Tuple[MdpSpec, CostShift]:
    """Add K = max(0, -min cost) per channel so every cost is nonnegative"""
    edges = [tr for trs in spec.transitions.values() for tr in trs]
    k_cvar = max(0.0, -min([tr.cvar_cost for tr in edges] + list(spec.terminal_cvar_cost)))
    k_mean = max(0.0, -min([tr.mean_cost for tr in edges] + list(spec.terminal_mean_cost)))
    if k_cvar == 0 and k_mean == 0:
        return spec, CostShift()

    factor = horizon_factor(spec.discount, horizon)
    shift = CostShift(k_cvar, k_mean, k_cvar * factor, k_mean * factor)
    logger.info("shifting costs by K=%g (cvar) and K1=%g (mean)", k_cvar, k_mean)
    shifted = replace(
        spec,
        transitions={
            key: tuple(replace(tr, cvar_cost=tr.cvar_cost + k_cvar, mean_cost=tr.mean_cost + k_mean) for tr in trs)
            for key, trs in spec.transitions.items()
        },
        terminal_cvar_cost=tuple(v + k_cvar for v in spec.terminal_cvar_cost),
        terminal_mean_cost=tuple(v + k_mean for v in spec.terminal_mean_cost),
    )
    return shifted, shift


def scale_mean_costs(spec: MdpSpec, factor: float) -> MdpSpec:
    """Multiply the mean channel (one-step and terminal) by factor"""
    return replace(
        spec,
        transitions={
            key: tuple(replace(tr, mean_cost=tr.mean_cost * factor) for tr in trs)
            for key, trs in spec.transitions.items()
        },
        terminal_mean_cost=tuple(v * factor for v in spec.terminal_mean_cost),
    )


# Random costs
def augmented_state_name(state: str, label: str) -> str:
    return f"{state}{AUGMENTED_SEPARATOR}{label}"


def augment_random_costs(rspec: RandomCostSpec) -> MdpSpec:
    """
    Expand random one-step costs into the state: states become (x, w) over
    all outcome labels, with p(x',w'|x,w,a) = p(x'|x,a) q(w'|x,a,x') and
    cost c(x,a,x',w'), independent of w. Initial states use
    rspec.initial_label.
    """
    labels = rspec.outcome_labels
    n_labels = len(labels)
    slot = {label: k for k, label in enumerate(labels)}

    states = tuple(augmented_state_name(x, w) for x in rspec.states for w in labels)
    actions = tuple(rspec.actions[x] for x in range(rspec.n_states) for _ in labels)
    transitions: Dict[Tuple[int, int], Tuple[Transition, ...]] = {}
    for (x, a), edges in rspec.transitions.items():
        expanded = tuple(
            Transition(tr.target * n_labels + slot[o.label], tr.prob * o.prob, o.cost, tr.mean_cost)
            for tr in edges
            for o in tr.outcomes
            if tr.prob * o.prob > 0
        )
        for k in range(n_labels):
            transitions[(x * n_labels + k, a)] = expanded

    return MdpSpec(
        states=states,
        actions=actions,
        discount=rspec.discount,
        terminal_cvar_cost=tuple(v for v in rspec.terminal_cvar_cost for _ in labels),
        terminal_mean_cost=tuple(v for v in rspec.terminal_mean_cost for _ in labels),
        transitions=transitions,
    )


def validate_spec(spec: MdpSpec, tolerance: Optional[float] = None) -> None:
    """Check the MdpSpec invariants on an already-built spec"""
    tol = settings.prob_tolerance if tolerance is None else tolerance
    if not (0 < spec.discount <= 1):
        raise SpecValidationError(f"discount must lie in (0, 1], got {spec.discount!r}", "discount")
    for x, names in enumerate(spec.actions):
        if not names:
            raise SpecValidationError("action set must be non-empty", f"actions.{spec.states[x]}")
        for a in range(len(names)):
            location = f"({spec.states[x]}, {names[a]})"
            edges = spec.transitions.get((x, a))
            if edges is None:
                raise SpecValidationError("missing transition row", location)
            for tr in edges:
                if not 0 <= tr.target < spec.n_states:
                    raise SpecValidationError(f"unknown target index {tr.target}", location)
                if tr.prob < 0:
                    raise SpecValidationError(f"negative probability {tr.prob!r}", location)
            _check_probability_row(sum(tr.prob for tr in edges), location, tol)
