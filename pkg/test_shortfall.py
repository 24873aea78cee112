"""
Tests for expected-shortfall functions and their conjugates
"""
import numpy as np
import pytest

from cvarmdp.exceptions import DomainError, PwlShapeError
from cvarmdp.services.pwl import evaluate, left_deriv, right_deriv
from cvarmdp.services.shortfall import (
    ShortfallFunction,
    compact_shortfall,
    conjugate,
    evaluate_shortfall,
    lower_hull,
    min_shortfall,
    mix_shortfall,
    shift_shortfall,
    shortfall_distance,
    to_rows,
)


def coin_shortfall() -> ShortfallFunction:
    """A fair coin between costs 0 and 10"""
    done = ShortfallFunction.terminal(0.0, 0.0)
    return mix_shortfall([0.5, 0.5], [shift_shortfall(done, 0.0, 0.0, 1.0), shift_shortfall(done, 0.0, 10.0, 1.0)])


def test_terminal_shortfall():
    w = ShortfallFunction.terminal(2.0, 5.0)
    assert w.n_points == 1
    assert w.floor == 2.0
    assert evaluate_shortfall(w, np.array([0.0, 5.0, 9.0])) == pytest.approx([7.0, 2.0, 2.0])


def test_shape_is_validated():
    with pytest.raises(PwlShapeError):
        ShortfallFunction([0.0, 1.0], [0.0, 1.0])
    with pytest.raises(PwlShapeError):
        ShortfallFunction([0.0, 1.0], [3.0, 0.0])
    with pytest.raises(PwlShapeError):
        ShortfallFunction([1.0, 0.0], [0.0, 0.0])
    with pytest.raises(PwlShapeError):
        ShortfallFunction.from_rows([])
    with pytest.raises(DomainError):
        shift_shortfall(ShortfallFunction.terminal(0.0, 0.0), 0.0, 1.0, 0.0)


def test_coin_mix():
    w = coin_shortfall()
    assert to_rows(w) == [(0.0, 5.0), (10.0, 0.0)]
    assert w(-2.0) == pytest.approx(7.0)
    assert w(4.0) == pytest.approx(3.0)


def test_shift_pays_the_costs_and_discounts():
    w = shift_shortfall(coin_shortfall(), 1.0, 2.0, 0.5)
    assert to_rows(w) == [(2.0, 3.5), (7.0, 1.0)]


def test_min_adds_the_crossing():
    sure = shift_shortfall(ShortfallFunction.terminal(0.0, 0.0), 0.0, 6.0, 1.0)
    w = min_shortfall([coin_shortfall(), sure])
    grid = np.array([-2.0, 0.0, 1.0, 2.0, 4.0, 6.0, 8.0, 12.0])
    assert evaluate_shortfall(w, grid) == pytest.approx([7.0, 5.0, 4.5, 4.0, 2.0, 0.0, 0.0, 0.0])
    assert np.any(np.isclose(w.thresholds, 2.0))


def test_conjugate_of_the_coin():
    v = conjugate(coin_shortfall())
    assert evaluate(v, 0.25) == pytest.approx(2.5)
    assert evaluate(v, 1.0) == pytest.approx(5.0)
    assert right_deriv(v, 0.0) == pytest.approx(10.0)
    assert left_deriv(v, 0.5) == pytest.approx(10.0)
    assert right_deriv(v, 0.5) == pytest.approx(0.0)


def test_conjugate_skips_points_above_the_hull():
    sure = shift_shortfall(ShortfallFunction.terminal(0.0, 0.0), 0.0, 6.0, 1.0)
    w = min_shortfall([coin_shortfall(), sure])
    hull_s, hull_v = lower_hull(w)
    assert not np.any(np.isclose(hull_s, 2.0))
    assert hull_v[0] == pytest.approx(5.0)

    v = conjugate(w)
    assert evaluate(v, 0.5) == pytest.approx(3.0)
    assert evaluate(v, 5 / 6) == pytest.approx(5.0)
    assert evaluate(v, 1.0) == pytest.approx(5.0)
    # y*s + W(s) is never below the conjugate
    for y in np.linspace(0.0, 1.0, 11):
        assert np.all(y * w.thresholds + w.values >= evaluate(v, y) - 1e-12)


def test_compaction_stays_within_epsilon():
    w = ShortfallFunction([0.0, 1.0, 2.0], [1.0, 0.45, 0.0])
    assert compact_shortfall(w, 0.0) is w
    assert compact_shortfall(w, 0.01).n_points == 3
    loose = compact_shortfall(w, 0.1)
    assert loose.n_points == 2
    assert shortfall_distance(w, loose) <= 0.1


def test_distance_covers_the_tails():
    w = coin_shortfall()
    moved = shift_shortfall(w, 1.0, 0.0, 1.0)
    assert shortfall_distance(w, moved) == pytest.approx(1.0)
    assert shortfall_distance(w, w) == 0.0
