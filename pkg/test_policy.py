"""
Tests for the online policy runner
"""
import csv
import io
from pathlib import Path

import numpy as np
import pytest

from cvarmdp.exceptions import DomainError, InfeasibleTraceError, ResourceGuardError
from cvarmdp.models import DerivativeSide, MdpSpec, ObjectiveMode, load_spec
from cvarmdp.orchestrator.verification_orchestrator import random_instances
from cvarmdp.services.oracle import enumerate_distribution, objective_of_distribution, random_spec
from cvarmdp.services.policy import (
    TRACE_COLUMNS,
    AlgorithmCvarRunner,
    IntervalRisk,
    KnownRisk,
    empirical_cvar,
    induced_history_policy,
    infinite_step_count,
    iter_reachable_paths,
    nature_tail_levels,
    run_trajectory,
    simulate,
    write_trace_csv,
)
from cvarmdp.services.solver import cvar_value, mode_tables, solve_finite, solve_infinite

DATA = Path(__file__).parent / "data"


@pytest.fixture(scope="module")
def two_stage():
    return solve_finite(load_spec(DATA / "two_stage.json"), 2)


@pytest.fixture(scope="module")
def coin():
    return solve_finite(load_spec(DATA / "coin.json"), 1)


def test_init_seeds_u_from_Q(two_stage):
    runner = AlgorithmCvarRunner(two_stage)
    state = runner.init("s", 0.25)
    assert state.action == 0
    assert state.u == pytest.approx(11.0)
    assert state.informed
    assert isinstance(state.risk, KnownRisk)


def test_step_recovers_an_interval(two_stage):
    runner = AlgorithmCvarRunner(two_stage)
    state = runner.step(runner.init("s", 0.25), "m")
    assert state.t == 1
    assert state.u == pytest.approx(10.0)
    assert isinstance(state.risk, IntervalRisk)
    assert (state.risk.lo, state.risk.hi) == pytest.approx((0.0, 0.5))
    assert state.risk.y == pytest.approx(0.25)
    assert not state.informed
    assert state.action == 0


def test_runner_stops_at_the_horizon(coin):
    runner = AlgorithmCvarRunner(coin)
    state = runner.init("s", 0.25)
    assert state.action == 0
    assert runner.step(state, "b").action is None


def test_runner_rejects_bad_inputs(two_stage):
    runner = AlgorithmCvarRunner(two_stage)
    with pytest.raises(DomainError):
        runner.init("s", 0.0)
    with pytest.raises(InfeasibleTraceError):
        runner.step(runner.init("s", 0.25), "g")


def test_fixed_trace(two_stage):
    trajectory = run_trajectory(two_stage, "s", 0.25, path=["s", "m", "b"])
    assert trajectory.states == (0, 1, 3)
    assert [row.state for row in trajectory.steps] == ["s", "m", "b"]
    assert [row.action for row in trajectory.steps] == ["go", "flip", ""]
    assert [row.step_cost for row in trajectory.steps] == [1.0, 10.0, 0.0]
    assert trajectory.total_cost == pytest.approx(11.0)
    assert trajectory.steps[1].u == pytest.approx(10.0)
    assert (trajectory.steps[1].y_lo, trajectory.steps[1].y_hi) == pytest.approx((0.0, 0.5))

    stream = io.StringIO()
    write_trace_csv(trajectory, stream)
    rows = list(csv.DictReader(io.StringIO(stream.getvalue())))
    assert list(rows[0].keys()) == TRACE_COLUMNS
    assert [row["u"] for row in rows[:2]] == ["11", "10"]
    assert rows[-1]["cumulative_discounted_cost"] == "11"


def test_infeasible_traces(two_stage):
    with pytest.raises(InfeasibleTraceError):
        run_trajectory(two_stage, "s", 0.25, path=["s", "g"])
    with pytest.raises(InfeasibleTraceError):
        run_trajectory(two_stage, "s", 0.25, path=["m", "b"])
    with pytest.raises(InfeasibleTraceError):
        run_trajectory(two_stage, "s", 0.25, path=["s", "m", "b", "b"])


def test_simulation_matches_the_exact_value(coin):
    trajectories = simulate(coin, "s", 0.25, episodes=1000, seed=7)
    costs = [tr.total_cost for tr in trajectories]
    assert set(costs) <= {0.0, 10.0}
    assert empirical_cvar(costs, 0.25) == pytest.approx(cvar_value(coin, "s", 0.25))

    again = simulate(coin, "s", 0.25, episodes=1000, seed=7)
    assert [tr.total_cost for tr in again] == costs


def test_simulation_guards(coin):
    with pytest.raises(DomainError):
        simulate(coin, "s", 0.25, episodes=0)
    with pytest.raises(ResourceGuardError):
        simulate(coin, "s", 0.25, episodes=10 ** 9)


def test_empirical_cvar():
    assert empirical_cvar([0.0, 10.0], 0.5) == pytest.approx(10.0)
    assert empirical_cvar([0.0, 10.0], 1.0) == pytest.approx(5.0)


def test_tail_levels_follow_the_nature(two_stage):
    records = nature_tail_levels(two_stage, "s", 0.25, ["s", "m", "b"])
    assert records[1].true_y == pytest.approx(0.25)
    assert records[1].risk.contains(records[1].true_y)
    # the bad branch receives all of the tail mass
    assert records[2].true_y == pytest.approx(0.5)
    assert records[2].risk.contains(records[2].true_y)


def test_reachable_paths(two_stage):
    paths = sorted(iter_reachable_paths(two_stage, "s", 0.25))
    assert paths == [(0, 1, 2), (0, 1, 3)]


MODE_SPECS = {
    ObjectiveMode.PURE_CVAR: {},
    ObjectiveMode.MEAN_PLUS_ALPHA_CVAR: {"mean_costs": True, "terminal_costs": True},
    ObjectiveMode.MEAN_PLUS_CVAR: {"mean_costs": True, "terminal_costs": True},
}


@pytest.mark.parametrize("mode", list(ObjectiveMode))
@pytest.mark.parametrize("side", list(DerivativeSide))
def test_induced_policy_is_optimal(side, mode):
    rng = np.random.default_rng(17)
    for _ in range(100):
        spec = random_spec(rng, **MODE_SPECS[mode])
        horizon = int(rng.integers(1, 4))
        tables = solve_finite(spec, horizon)
        for alpha in (0.1, 0.25, 0.5, 0.75, 1.0):
            policy = induced_history_policy(mode_tables(tables, alpha, mode), 0, alpha, side)
            dist = enumerate_distribution(spec, policy, 0, horizon)
            expected = cvar_value(tables, 0, alpha, mode)
            assert objective_of_distribution(dist, alpha, mode) == pytest.approx(expected, abs=1e-9, rel=1e-9)


@pytest.mark.parametrize("side", list(DerivativeSide))
def test_runner_attains_the_value_on_seeded_instances(side):
    for instance in random_instances(100, 12345):
        if not isinstance(instance.spec, MdpSpec):
            continue
        mode = instance.mode or ObjectiveMode.PURE_CVAR
        tables = solve_finite(instance.spec, instance.horizon)
        for alpha in instance.alphas:
            if alpha <= 0:
                continue
            policy = induced_history_policy(mode_tables(tables, alpha, mode), 0, alpha, side)
            dist = enumerate_distribution(instance.spec, policy, 0, instance.horizon)
            expected = cvar_value(tables, 0, alpha, mode)
            assert objective_of_distribution(dist, alpha, mode) == pytest.approx(expected, abs=1e-9, rel=1e-9), instance.label


@pytest.mark.parametrize("side", list(DerivativeSide))
def test_runner_keeps_its_threshold_through_a_gap(side):
    tables = solve_finite(load_spec(DATA / "split_gamble.json"), 2)
    runner = AlgorithmCvarRunner(tables, side)
    state = runner.init("s", 0.75)
    assert state.u == pytest.approx(4.0)
    state = runner.step(state, "m")
    assert state.u == pytest.approx(4.0)
    assert state.action == tables.spec.action_index(1, "sure")
    assert isinstance(state.risk, KnownRisk)
    assert state.risk.y == pytest.approx(5 / 6)

    trajectory = run_trajectory(tables, "s", 0.75, path=["s", "m", "d"], side=side)
    assert [row.action for row in trajectory.steps] == ["go", "sure", ""]
    assert trajectory.total_cost == pytest.approx(6.0)


def test_tail_levels_stop_where_the_transfer_falls_short():
    tables = solve_finite(load_spec(DATA / "split_gamble.json"), 2)
    records = nature_tail_levels(tables, "s", 0.75, ["s", "m", "d"])
    assert len(records) == 1
    assert records[0].state == 0


def test_infinite_runner():
    tables = solve_infinite(load_spec(DATA / "chain.json"), epsilon=1e-6)
    steps = infinite_step_count(tables)
    assert steps == AlgorithmCvarRunner(tables).n_steps
    assert 0.5 ** steps * tables.spec.cost_bound / 0.5 <= 1e-6
    trajectory = run_trajectory(tables, "c", 0.5, seed=3)
    assert len(trajectory.steps) == steps + 1
    assert trajectory.total_cost == pytest.approx(2.0, abs=1e-5)
    assert trajectory.error_bound == tables.error_bound
