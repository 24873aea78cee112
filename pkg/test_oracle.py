"""
Tests for the brute-force oracle: exact outcome laws, CVaR and exhaustive search
"""
from pathlib import Path

import numpy as np
import pytest

from cvarmdp.config import settings
from cvarmdp.exceptions import DomainError, ResourceGuardError
from cvarmdp.models import ObjectiveMode, load_spec, parse_spec
from cvarmdp.services.oracle import (
    HistoryPolicy,
    OutcomeDistribution,
    count_policies,
    cvar_by_minimization,
    cvar_of_distribution,
    enumerate_distribution,
    exhaustive_policy_search,
    objective_of_distribution,
    random_random_cost_spec,
    random_spec,
)
from cvarmdp.services.solver import cvar_value, expand_spec, solve_finite

DATA = Path(__file__).parent / "data"

COIN_LAW = OutcomeDistribution.from_pairs([(0.0, 0.5), (10.0, 0.5)])


def risk_choice_spec():
    return parse_spec({
        "states": ["s", "g", "b"],
        "actions": {"s": ["sure", "gamble"], "g": ["stay"], "b": ["stay"]},
        "discount": 1.0,
        "transitions": [
            {"from": "s", "action": "sure", "to": "g", "prob": 1.0, "cvar_cost": 6},
            {"from": "s", "action": "gamble", "to": "g", "prob": 0.5, "cvar_cost": 0},
            {"from": "s", "action": "gamble", "to": "b", "prob": 0.5, "cvar_cost": 10},
            {"from": "g", "action": "stay", "to": "g", "prob": 1.0, "cvar_cost": 0},
            {"from": "b", "action": "stay", "to": "b", "prob": 1.0, "cvar_cost": 0},
        ],
    })


def test_cvar_of_distribution():
    assert cvar_of_distribution(COIN_LAW, 0.75) == pytest.approx(20.0 / 3.0)
    assert cvar_of_distribution(COIN_LAW, 0.25) == pytest.approx(10.0)
    assert cvar_of_distribution(COIN_LAW, 1.0) == pytest.approx(5.0)
    assert cvar_of_distribution(COIN_LAW, 0.0) == 10.0
    assert cvar_by_minimization(COIN_LAW, 0.75) == pytest.approx(20.0 / 3.0)
    with pytest.raises(DomainError):
        cvar_of_distribution(COIN_LAW, 1.5)


def test_distribution_coalesces_atoms():
    dist = OutcomeDistribution.from_pairs([(1.0, 0.25), (1.0 + 1e-15, 0.25), (3.0, 0.5), (7.0, 0.0)])
    assert len(dist.atoms) == 2
    assert dist.probabilities.tolist() == pytest.approx([0.5, 0.5])
    assert dist.mean == pytest.approx(2.0)
    assert dist.maximum == 3.0
    with pytest.raises(DomainError):
        OutcomeDistribution.from_samples([])


def test_objective_modes():
    dist = OutcomeDistribution.from_pairs([(0.0, 0.5), (10.0, 0.5)], expected_mean_cost=2.0)
    assert objective_of_distribution(dist, 0.25, ObjectiveMode.PURE_CVAR) == pytest.approx(10.0)
    assert objective_of_distribution(dist, 0.25, ObjectiveMode.MEAN_PLUS_ALPHA_CVAR) == pytest.approx(4.5)
    assert objective_of_distribution(dist, 0.25, ObjectiveMode.MEAN_PLUS_CVAR) == pytest.approx(12.0)


def test_enumerate_two_stage():
    spec = load_spec(DATA / "two_stage.json")
    policy = HistoryPolicy({(0,): 0, (0, 1): 0})
    dist = enumerate_distribution(spec, policy, "s", 2)
    assert dist.atoms == ((1.0, 0.5), (11.0, 0.5))
    with pytest.raises(DomainError):
        enumerate_distribution(spec, HistoryPolicy({(0,): 0}), "s", 2)


def test_enumerate_deterministic_chain():
    dist = enumerate_distribution(load_spec(DATA / "chain.json"), HistoryPolicy({(0,): 0, (0, 0): 0}), 0, 2)
    assert dist.atoms == ((1.5, 1.0),)


def test_trajectory_guard(monkeypatch):
    monkeypatch.setattr(settings, "max_trajectories", 1)
    spec = load_spec(DATA / "coin.json")
    with pytest.raises(ResourceGuardError):
        enumerate_distribution(spec, HistoryPolicy({(0,): 0}), 0, 1)


def test_count_policies():
    assert count_policies(load_spec(DATA / "coin.json"), "s", 1) == 1
    assert count_policies(risk_choice_spec(), "s", 1) == 2
    assert count_policies(risk_choice_spec(), "s", 2) == 2


def test_exhaustive_search_on_small_specs():
    policy, value = exhaustive_policy_search(load_spec(DATA / "coin.json"), "s", 0.25, 1)
    assert value == pytest.approx(10.0)
    assert policy.action((0,)) == 0

    spec = risk_choice_spec()
    policy, value = exhaustive_policy_search(spec, "s", 0.25, 1)
    assert value == pytest.approx(6.0)
    assert policy.action((0,)) == 0
    policy, value = exhaustive_policy_search(spec, "s", 1.0, 1)
    assert value == pytest.approx(5.0)
    assert policy.action((0,)) == 1
    _, value = exhaustive_policy_search(spec, "s", 0.0, 1)
    assert value == pytest.approx(6.0)


def test_threshold_search_matches_enumeration(monkeypatch):
    rng = np.random.default_rng(4)
    specs = [(random_spec(rng), int(rng.integers(1, 4))) for _ in range(10)]
    explicit = [exhaustive_policy_search(spec, 0, 0.25, n)[1] for spec, n in specs]
    monkeypatch.setattr(settings, "max_policies", 0)
    threshold = [exhaustive_policy_search(spec, 0, 0.25, n)[1] for spec, n in specs]
    assert threshold == pytest.approx(explicit, abs=1e-9)
    with pytest.raises(ResourceGuardError):
        exhaustive_policy_search(specs[0][0], 0, 0.0, specs[0][1])


def test_solver_agrees_with_exhaustive_search():
    rng = np.random.default_rng(1)
    for _ in range(25):
        spec = random_spec(rng)
        horizon = int(rng.integers(1, 4))
        tables = solve_finite(spec, horizon)
        for alpha in (0.1, 0.25, 0.5, 0.75, 1.0):
            _, best = exhaustive_policy_search(spec, 0, alpha, horizon)
            assert cvar_value(tables, 0, alpha) == pytest.approx(best, abs=1e-9, rel=1e-9)


def test_solver_agrees_with_exhaustive_search_on_mean_costs():
    rng = np.random.default_rng(2)
    for _ in range(10):
        spec = random_spec(rng, mean_costs=True, terminal_costs=True)
        horizon = int(rng.integers(1, 3))
        tables = solve_finite(spec, horizon)
        for alpha in (0.25, 0.5, 1.0):
            _, best = exhaustive_policy_search(spec, 0, alpha, horizon, ObjectiveMode.MEAN_PLUS_ALPHA_CVAR)
            actual = cvar_value(tables, 0, alpha, ObjectiveMode.MEAN_PLUS_ALPHA_CVAR)
            assert actual == pytest.approx(best, abs=1e-9, rel=1e-9)


def test_random_costs_match_the_augmented_search():
    rng = np.random.default_rng(8)
    for _ in range(5):
        rspec = random_random_cost_spec(rng)
        mdp, label = expand_spec(rspec)
        x0 = mdp.state_index(f"s0|{label}")
        tables = solve_finite(rspec, 2)
        for alpha in (0.25, 0.75):
            _, best = exhaustive_policy_search(mdp, x0, alpha, 2)
            assert cvar_value(tables, "s0", alpha) == pytest.approx(best, abs=1e-9, rel=1e-9)


def test_random_specs_are_reproducible():
    a = random_spec(np.random.default_rng(5))
    b = random_spec(np.random.default_rng(5))
    assert a == b
    assert all(name.startswith("s") for name in a.states)
    for x, act in a.state_actions():
        assert sum(tr.prob for tr in a.successors(x, act)) == pytest.approx(1.0)


def test_history_policy_lookup():
    policy = HistoryPolicy({(0,): 1})
    assert policy.action((0,)) == 1
    assert len(policy) == 1
    with pytest.raises(DomainError):
        policy.action((0, 1))
