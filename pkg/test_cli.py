"""
Tests for the command-line surface
"""
import csv
import io
from pathlib import Path

import pytest

from cvarmdp.cli import build_parser, main
from cvarmdp.config import settings

DATA = Path(__file__).parent / "data"


def solve(tmp_path, name: str, *extra: str) -> Path:
    out = tmp_path / f"{Path(name).stem}.tables.json"
    assert main(["solve", "--mdp", str(DATA / name), *extra, "--out", str(out)]) == 0
    return out


def test_solve_reports_stages(tmp_path, capsys):
    out = solve(tmp_path, "coin.json", "--horizon", "1")
    assert out.exists()
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "stages=1"
    assert lines[1] == "max_segments=2"


def test_solve_infinite_reports_the_bound(tmp_path, capsys):
    solve(tmp_path, "chain.json", "--infinite", "--epsilon", "1e-6")
    out = capsys.readouterr().out
    bound = next(line for line in out.splitlines() if line.startswith("error_bound="))
    assert float(bound.split("=")[1]) <= 1e-6


def test_solve_rejects_bad_input(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"states": ["s"], "actions": {"s": ["a"]}, "discount": 2.0, "transitions": []}')
    assert main(["solve", "--mdp", str(bad), "--horizon", "1", "--out", str(tmp_path / "t.json")]) == 2
    assert "discount" in capsys.readouterr().err
    assert main(["solve", "--mdp", str(DATA / "coin.json"), "--out", str(tmp_path / "t.json")]) == 2


def test_solve_guard_exit_code(tmp_path, monkeypatch):
    monkeypatch.setattr(settings, "segment_cap", 1)
    assert main(["solve", "--mdp", str(DATA / "coin.json"), "--horizon", "1", "--out", str(tmp_path / "t.json")]) == 3


@pytest.mark.parametrize("alpha,expected", [("0.25", "10"), ("1.0", "5"), ("0", "10")])
def test_value(tmp_path, capsys, alpha, expected):
    tables = solve(tmp_path, "coin.json", "--horizon", "1")
    capsys.readouterr()
    assert main(["value", "--tables", str(tables), "--state", "s", "--alpha", alpha, "--mode", "pure-cvar"]) == 0
    assert capsys.readouterr().out.strip() == expected


def test_value_errors(tmp_path, capsys):
    tables = solve(tmp_path, "coin.json", "--horizon", "1")
    assert main(["value", "--tables", str(tables), "--state", "x", "--alpha", "0.5"]) == 2
    assert main(["value", "--tables", str(tables), "--state", "s", "--alpha", "1.5"]) == 2
    assert main([
        "value", "--tables", str(tables), "--state", "s", "--alpha", "0.5",
        "--mdp", str(DATA / "two_stage.json"),
    ]) == 2
    assert "different MDP" in capsys.readouterr().err
    assert main([
        "value", "--tables", str(tables), "--state", "s", "--alpha", "0",
        "--mdp", str(DATA / "two_stage.json"),
    ]) == 2
    assert "different MDP" in capsys.readouterr().err
    assert main(["value", "--tables", str(tables), "--state", "s", "--alpha", "0", "--mdp", str(DATA / "coin.json")]) == 0
    assert capsys.readouterr().out.strip() == "10"


def test_value_on_random_costs(tmp_path, capsys):
    tables = solve(tmp_path, "coin_random_cost.json", "--horizon", "1")
    capsys.readouterr()
    assert main(["value", "--tables", str(tables), "--state", "s", "--alpha", "0.25"]) == 0
    assert capsys.readouterr().out.strip() == "10"


def test_policy_trace(tmp_path, capsys):
    tables = solve(tmp_path, "two_stage.json", "--horizon", "2")
    capsys.readouterr()
    assert main(["policy", "--tables", str(tables), "--state", "s", "--alpha", "0.25", "--trace", "s m b"]) == 0
    rows = list(csv.DictReader(io.StringIO(capsys.readouterr().out)))
    assert [row["u"] for row in rows] == ["11", "10", "0"]
    assert (rows[1]["y_lo"], rows[1]["y_hi"]) == ("0", "0.5")
    assert rows[-1]["cumulative_discounted_cost"] == "11"


def test_policy_trace_file_and_output(tmp_path):
    tables = solve(tmp_path, "two_stage.json", "--horizon", "2")
    trace = tmp_path / "trace.txt"
    trace.write_text("s\nm\ng\n")
    out = tmp_path / "trace.csv"
    assert main([
        "policy", "--tables", str(tables), "--state", "s", "--alpha", "0.5",
        "--trace", str(trace), "--side", "left", "--out", str(out),
    ]) == 0
    assert out.read_text().splitlines()[0].startswith("t,state,action")


def test_policy_infeasible_trace(tmp_path, capsys):
    tables = solve(tmp_path, "two_stage.json", "--horizon", "2")
    assert main(["policy", "--tables", str(tables), "--state", "s", "--alpha", "0.25", "--trace", "s g"]) == 4
    assert "zero probability" in capsys.readouterr().err


def test_policy_simulation(tmp_path, capsys):
    tables = solve(tmp_path, "coin.json", "--horizon", "1")
    capsys.readouterr()
    args = ["policy", "--tables", str(tables), "--state", "s", "--alpha", "0.25",
            "--simulate", "--seed", "7", "--episodes", "1000"]
    assert main(args) == 0
    first = capsys.readouterr().out
    assert "empirical_cvar=10" in first.splitlines()
    assert main(args) == 0
    assert capsys.readouterr().out == first


def test_export_pwl(tmp_path, capsys):
    tables = solve(tmp_path, "coin.json", "--horizon", "1")
    capsys.readouterr()
    assert main(["export-pwl", "--tables", str(tables), "--stage", "1", "--state", "s"]) == 0
    assert capsys.readouterr().out == "y,value,right_slope\n0,0,10\n0.5,5,0\n1,5,0\n"
    assert main(["export-pwl", "--tables", str(tables), "--stage", "0", "--state", "s"]) == 0
    assert len(capsys.readouterr().out.splitlines()) == 3
    assert main(["export-pwl", "--tables", str(tables), "--stage", "1", "--state", "nowhere"]) == 2
    assert main(["export-pwl", "--tables", str(tables), "--stage", "5", "--state", "s"]) == 2


def test_verify_file(capsys):
    assert main(["verify", "--mdp", str(DATA / "coin.json"), "--alphas", "0.25,0.5,1.0", "--horizon", "1"]) == 0
    out = capsys.readouterr().out
    assert any(line.startswith("PASS") and "solver-oracle agreement" in line for line in out.splitlines())
    assert out.splitlines()[-1] == "instances=3"


def test_verify_random(capsys):
    assert main(["verify", "--random", "--count", "5", "--seed", "1"]) == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out
    assert main(["verify", "--random", "--count", "5", "--seed", "1"]) == 0
    assert capsys.readouterr().out == out


def test_verify_rejects_bad_alphas(capsys):
    assert main(["verify", "--mdp", str(DATA / "coin.json"), "--alphas", "a,b"]) == 2


def test_value_help_names_the_worst_path_route(capsys):
    with pytest.raises(SystemExit):
        build_parser().parse_args(["value", "--help"])
    text = " ".join(capsys.readouterr().out.split())
    assert "alpha=0" in text
    assert "game value of the MDP embedded in the tables" in text


def test_verify_count_default():
    args = build_parser().parse_args(["verify", "--random"])
    assert args.count == 200
