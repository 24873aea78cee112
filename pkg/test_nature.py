"""
Tests for the Nature's mass-transfer problem
"""
import math

import numpy as np
import pytest

from cvarmdp.exceptions import DomainError, ResourceGuardError
from cvarmdp.services.nature import (
    TransferInstance,
    allocation_derivatives,
    build_F,
    optimal_allocation,
)
from cvarmdp.services.oracle import grid_best_response, random_transfer_instance
from cvarmdp.services.pwl import PwlConcave, evaluate, left_deriv, right_deriv


def coin_instance() -> TransferInstance:
    # successors g (cost 0) and b (cost 10) after the successor transform
    return TransferInstance(
        targets=(1, 2),
        probabilities=(0.5, 0.5),
        functions=(PwlConcave.linear(0.0, 0.0), PwlConcave.linear(0.0, 10.0)),
    )


def test_instance_validation():
    f = PwlConcave.linear(0.0, 1.0)
    with pytest.raises(DomainError):
        TransferInstance((), (), ())
    with pytest.raises(DomainError):
        TransferInstance((0, 1), (0.5, 0.4), (f, f))
    with pytest.raises(DomainError):
        TransferInstance((0, 1), (1.0, 0.0), (f, f))
    with pytest.raises(DomainError):
        TransferInstance((0,), (1.0,), (f, f))
    assert coin_instance().mass_bound == 2.0


def test_coin_F():
    F = build_F(coin_instance())
    assert F.domain_length == 1.0
    assert np.array(F.segments) == pytest.approx(np.array([(10.0, 0.5), (0.0, 0.5)]))
    assert F(0.3) == pytest.approx(3.0)


def test_coin_allocation():
    inst = coin_instance()
    alloc = optimal_allocation(inst, 0.3)
    assert alloc.z[2] == pytest.approx(0.3)
    assert alloc.z[1] == pytest.approx(0.0)
    assert alloc.b[2] == pytest.approx(2.0)
    assert alloc.b[1] == pytest.approx(0.0)
    assert alloc.value == pytest.approx(3.0)
    assert alloc.level(2) == pytest.approx(0.6)
    assert inst.objective([alloc.b[1], alloc.b[2]], 0.3) == pytest.approx(3.0)


def test_allocation_at_the_ends():
    inst = coin_instance()
    zero = optimal_allocation(inst, 0.0)
    assert zero.b == {1: 1.0, 2: 1.0}
    assert zero.value == 0.0
    full = optimal_allocation(inst, 1.0)
    assert full.b[1] == pytest.approx(1.0)
    assert full.b[2] == pytest.approx(1.0)
    assert full.value == pytest.approx(5.0)
    with pytest.raises(DomainError):
        optimal_allocation(inst, 1.5)


def test_coin_derivative_identities():
    inst = coin_instance()
    F = build_F(inst)
    for y in (0.3, 0.5, 0.8):
        right, left = allocation_derivatives(inst, optimal_allocation(inst, y))
        assert right == pytest.approx(right_deriv(F, y))
        assert left == pytest.approx(left_deriv(F, y))


def test_F_is_attained_by_the_greedy_allocation():
    rng = np.random.default_rng(3)
    for _ in range(100):
        inst = random_transfer_instance(rng)
        F = build_F(inst)
        for y in rng.uniform(0.0, 1.0, size=5):
            alloc = optimal_allocation(inst, y)
            z = np.array([alloc.z[t] for t in inst.targets])
            assert z.sum() == pytest.approx(y, abs=1e-12)
            assert np.all(z >= 0.0)
            assert np.all(z <= np.array(inst.probabilities) + 1e-15)
            assert alloc.value == pytest.approx(evaluate(F, y), abs=1e-9)


def test_random_derivative_identities():
    rng = np.random.default_rng(5)
    for _ in range(100):
        inst = random_transfer_instance(rng)
        F = build_F(inst)
        for y in rng.uniform(0.0, 1.0, size=5):
            right, left = allocation_derivatives(inst, optimal_allocation(inst, y))
            assert right <= left
            assert right == pytest.approx(right_deriv(F, y), abs=1e-9)
            assert left == pytest.approx(left_deriv(F, y), abs=1e-9)


def test_grid_best_response_is_a_close_lower_bound():
    assert grid_best_response(coin_instance(), 0.3) == pytest.approx(3.0, abs=1e-2)
    rng = np.random.default_rng(9)
    for _ in range(10):
        inst = random_transfer_instance(rng, max_successors=3, max_slope=2)
        F = build_F(inst)
        for y in (0.0, 0.25, 0.6, 1.0):
            grid = grid_best_response(inst, y)
            assert grid <= evaluate(F, y) + 1e-9
            assert grid == pytest.approx(evaluate(F, y), abs=1e-2)


def test_grid_guard():
    f = PwlConcave.linear(0.0, 1.0)
    inst = TransferInstance(tuple(range(8)), (0.125,) * 8, (f,) * 8)
    with pytest.raises(ResourceGuardError):
        grid_best_response(inst, 0.5)
    assert math.isfinite(build_F(inst)(0.5))
