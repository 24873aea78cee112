"""
Tests for MDP ingestion, validation, cost shifting and the random-cost augmentation
"""
import json
from pathlib import Path

import pytest

from cvarmdp.exceptions import DomainError, SpecValidationError
from cvarmdp.models import (
    MdpSpec,
    RandomCostSpec,
    augment_random_costs,
    horizon_factor,
    load_spec,
    parse_spec,
    scale_mean_costs,
    shift_costs,
    spec_to_document,
    validate_spec,
)

DATA = Path(__file__).parent / "data"


def coin_document():
    return json.loads((DATA / "coin.json").read_text())


def test_parse_coin():
    spec = parse_spec(coin_document())
    assert isinstance(spec, MdpSpec)
    assert spec.states == ("s", "g", "b")
    assert spec.n_states == 3
    assert spec.actions[0] == ("flip",)
    edges = spec.successors(0, 0)
    assert [tr.target for tr in edges] == [1, 2]
    assert [tr.prob for tr in edges] == [0.5, 0.5]
    assert [tr.cvar_cost for tr in edges] == [0.0, 10.0]
    assert spec.transition_prob(0, 0, 0) == 0.0
    assert not spec.has_mean_costs
    assert spec.cost_bound == 10.0


def test_state_lookup_errors():
    spec = load_spec(DATA / "coin.json")
    assert spec.state_index("b") == 2
    with pytest.raises(DomainError):
        spec.state_index("nowhere")
    with pytest.raises(DomainError):
        spec.action_index(0, "stay")


def test_duplicate_states_rejected():
    doc = coin_document()
    doc["states"].append("s")
    with pytest.raises(SpecValidationError) as exc:
        parse_spec(doc)
    assert exc.value.location == "states"


def test_row_sum_names_the_row():
    doc = coin_document()
    doc["transitions"][1]["prob"] = 0.4
    with pytest.raises(SpecValidationError) as exc:
        parse_spec(doc)
    assert exc.value.location == "(s, flip)"
    assert "sum" in str(exc.value)


def test_unknown_references_rejected():
    doc = coin_document()
    doc["transitions"][0]["to"] = "x"
    with pytest.raises(SpecValidationError) as exc:
        parse_spec(doc)
    assert exc.value.location == "(s, flip)"

    doc = coin_document()
    doc["transitions"][0]["action"] = "run"
    with pytest.raises(SpecValidationError):
        parse_spec(doc)


def test_discount_and_probability_ranges():
    doc = coin_document()
    doc["discount"] = 0.0
    with pytest.raises(SpecValidationError) as exc:
        parse_spec(doc)
    assert exc.value.location == "discount"

    doc = coin_document()
    doc["transitions"][0]["prob"] = -0.5
    doc["transitions"][1]["prob"] = 1.5
    with pytest.raises(SpecValidationError):
        parse_spec(doc)


def test_schema_errors_become_validation_errors():
    doc = coin_document()
    del doc["transitions"][0]["cvar_cost"]
    with pytest.raises(SpecValidationError) as exc:
        parse_spec(doc)
    assert exc.value.location.startswith("transitions")
    with pytest.raises(SpecValidationError):
        parse_spec("{not json")
    with pytest.raises(SpecValidationError):
        load_spec(DATA / "missing.json")


def test_zero_probability_edges_dropped_and_rows_renormalised():
    doc = coin_document()
    doc["transitions"].append({"from": "s", "action": "flip", "to": "s", "prob": 0.0, "cvar_cost": 3})
    doc["transitions"][0]["prob"] = 0.5 + 1e-12
    spec = parse_spec(doc)
    edges = spec.successors(0, 0)
    assert [tr.target for tr in edges] == [1, 2]
    assert sum(tr.prob for tr in edges) == pytest.approx(1.0, abs=1e-15)


def test_document_round_trip():
    spec = load_spec(DATA / "two_stage.json")
    assert parse_spec(spec_to_document(spec)) == spec
    validate_spec(spec)


def test_horizon_factor():
    assert horizon_factor(1.0, 3) == 4.0
    assert horizon_factor(0.5, 1) == pytest.approx(1.5)
    assert horizon_factor(0.5, None) == pytest.approx(2.0)
    with pytest.raises(DomainError):
        horizon_factor(1.0, None)


def test_shift_costs_makes_costs_nonnegative():
    doc = {
        "states": ["c"],
        "actions": {"c": ["stay"]},
        "discount": 1.0,
        "transitions": [{"from": "c", "action": "stay", "to": "c", "prob": 1.0, "cvar_cost": -2}],
    }
    spec = parse_spec(doc)
    shifted, shift = shift_costs(spec, 2)
    assert shifted.successors(0, 0)[0].cvar_cost == 0.0
    assert shifted.terminal_cvar_cost == (2.0,)
    assert shift.cvar_shift == 2.0
    assert shift.cvar_offset == 6.0
    assert not shift.is_identity

    same, identity = shift_costs(load_spec(DATA / "coin.json"), 1)
    assert identity.is_identity
    assert same.successors(0, 0)[1].cvar_cost == 10.0


def test_scale_mean_costs():
    doc = coin_document()
    for entry in doc["transitions"][:2]:
        entry["mean_cost"] = 2.0
    spec = parse_spec(doc)
    assert spec.has_mean_costs
    assert spec.expected_mean_cost(0, 0) == 2.0
    scaled = scale_mean_costs(spec, 0.25)
    assert scaled.expected_mean_cost(0, 0) == 0.5
    assert scaled.successors(0, 0)[1].cvar_cost == 10.0


def test_random_cost_document():
    spec = load_spec(DATA / "coin_random_cost.json")
    assert isinstance(spec, RandomCostSpec)
    assert spec.outcome_labels == ("0", "hit", "miss")
    assert spec.initial_label == "0"


def test_augmentation():
    spec = augment_random_costs(load_spec(DATA / "coin_random_cost.json"))
    assert spec.n_states == 9
    assert spec.states[0] == "s|0"
    edges = spec.successors(spec.state_index("s|0"), 0)
    assert [spec.states[tr.target] for tr in edges] == ["g|0", "b|hit", "b|miss"]
    assert [tr.prob for tr in edges] == [0.5, 0.25, 0.25]
    assert [tr.cvar_cost for tr in edges] == [0.0, 10.0, 0.0]
    # rows do not depend on the label part of the state
    assert spec.successors(spec.state_index("s|hit"), 0) == edges
    validate_spec(spec)
