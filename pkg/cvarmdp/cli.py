"""
Command-line surface: solve, value, policy, export-pwl, verify
"""
import argparse
import logging
import sys
from contextlib import contextmanager
from pathlib import Path
from typing import Iterator, List, Optional, Sequence, TextIO

from cvarmdp import __version__
from cvarmdp.config import settings
from cvarmdp.exceptions import CvarMdpError, DomainError, SpecValidationError, VerificationFailure
from cvarmdp.logging_setup import configure_logging
from cvarmdp.models.mdp import load_spec
from cvarmdp.models.schemas import DerivativeSide, ObjectiveMode
from cvarmdp.orchestrator import create_orchestrator, file_instances, format_report, random_instances
from cvarmdp.services.oracle import OutcomeDistribution, cvar_of_distribution
from cvarmdp.services.policy import run_trajectory, simulate, write_trace_csv
from cvarmdp.services.pwl import format_number
from cvarmdp.services.solver import ValueTables, cvar_value, solve_finite, solve_infinite, worst_path_value
from cvarmdp.services.tables_io import export_pwl_csv, load_tables, save_tables

logger = logging.getLogger(__name__)


@contextmanager
def _output(path: Optional[str]) -> Iterator[TextIO]:
    if path is None:
        yield sys.stdout
        return
    with open(path, "w", encoding="utf-8", newline="") as stream:
        yield stream
    logger.info("wrote %s", path)


def _load_tables(args: argparse.Namespace) -> ValueTables:
    expected = load_spec(args.mdp) if getattr(args, "mdp", None) else None
    return load_tables(args.tables, expected)


def _parse_alphas(text: str) -> List[float]:
    try:
        return [float(part) for part in text.replace(" ", "").split(",") if part]
    except ValueError as e:
        raise SpecValidationError(f"cannot parse alphas {text!r}", "--alphas") from e


def _read_trace(text: str) -> List[str]:
    """A trace is a file of state names or an inline sequence"""
    path = Path(text)
    if path.is_file():
        text = path.read_text(encoding="utf-8")
    names = text.replace(",", " ").split()
    if not names:
        raise SpecValidationError("empty state sequence", "--trace")
    return names


def cmd_solve(args: argparse.Namespace) -> int:
    spec = load_spec(args.mdp)
    if args.infinite:
        tables = solve_infinite(spec, args.epsilon)
    else:
        if args.horizon is None:
            raise SpecValidationError("either --horizon or --infinite is required", "--horizon")
        tables = solve_finite(spec, args.horizon)
    save_tables(tables, args.out)

    per_stage = [max(f.n_segments for f in stage) for stage in tables.v_stages[1:]]
    if tables.is_infinite:
        print(f"stages=infinite iterations={tables.iterations}")
    else:
        print(f"stages={tables.horizon}")
    print("max_segments=" + ",".join(str(n) for n in per_stage))
    if tables.is_infinite:
        print(f"error_bound={format_number(tables.error_bound)}")
        print(f"tail_bound={format_number(tables.tail_bound)}")
    return 0


def cmd_value(args: argparse.Namespace) -> int:
    tables = _load_tables(args)
    mode = ObjectiveMode(args.mode)
    x = tables.state_index(args.state)
    if args.alpha == 0 and mode != ObjectiveMode.MEAN_PLUS_ALPHA_CVAR:
        if tables.source_spec.has_mean_costs:
            raise DomainError(f"alpha=0 in {mode.value} mode needs a spec without mean costs")
        values = worst_path_value(tables.source_spec, tables.horizon, tables.epsilon)
        value = values[tables.spec.states[x]]
    else:
        value = cvar_value(tables, x, args.alpha, mode)
    print(format_number(value))
    return 0


def cmd_policy(args: argparse.Namespace) -> int:
    tables = _load_tables(args)
    side = DerivativeSide(args.side)

    if args.simulate:
        trajectories = simulate(tables, args.state, args.alpha, args.episodes, args.seed, side)
        dist = OutcomeDistribution.from_samples([tr.total_cost for tr in trajectories])
        with _output(args.out) as stream:
            stream.write("cost,frequency\n")
            for cost, freq in dist.atoms:
                stream.write(f"{format_number(cost)},{format_number(freq)}\n")
        print(f"episodes={args.episodes}")
        print(f"mean={format_number(dist.mean)}")
        print(f"empirical_cvar={format_number(cvar_of_distribution(dist, args.alpha))}")
        return 0

    path = _read_trace(args.trace) if args.trace else None
    trajectory = run_trajectory(tables, args.state, args.alpha, side, path=path, seed=args.seed)
    with _output(args.out) as stream:
        write_trace_csv(trajectory, stream)
    if trajectory.error_bound is not None:
        logger.info("error bound %s", format_number(trajectory.error_bound))
    return 0


def cmd_export_pwl(args: argparse.Namespace) -> int:
    tables = _load_tables(args)
    with _output(args.out) as stream:
        export_pwl_csv(tables, args.stage, args.state, stream)
    return 0


def cmd_verify(args: argparse.Namespace) -> int:
    alphas = _parse_alphas(args.alphas)
    if args.random:
        instances = random_instances(args.count, args.seed, args.horizon, alphas)
    else:
        if not args.mdp:
            raise SpecValidationError("either --mdp or --random is required", "--mdp")
        instances = file_instances(load_spec(args.mdp), args.horizon or 1, alphas, Path(args.mdp).stem)

    orchestrator = create_orchestrator()
    report = orchestrator.verify(instances, parallel=settings.max_workers > 1)
    print(format_report(report))
    if not report.ok:
        failed = [prop.name for prop in report.properties if not prop.ok]
        raise VerificationFailure("failed properties: " + ", ".join(failed))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cvarmdp", description="Exact mean-CVaR optimization for finite MDPs")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("--log-level", default=None, help="overrides CVAR_LOG_LEVEL")
    sp = p.add_subparsers(dest="cmd", required=True)

    # solve
    a = sp.add_parser("solve", help="solve an MDP and write value tables")
    a.add_argument("--mdp", required=True)
    group = a.add_mutually_exclusive_group()
    group.add_argument("--horizon", type=int, default=None)
    group.add_argument("--infinite", action="store_true")
    a.add_argument("--epsilon", type=float, default=None)
    a.add_argument("--out", required=True)
    a.set_defaults(func=cmd_solve)

    # value
    a = sp.add_parser("value", help="optimal objective at a state and level")
    a.add_argument("--tables", required=True)
    a.add_argument("--state", required=True)
    a.add_argument(
        "--alpha",
        type=float,
        required=True,
        help="level in [0, 1]; alpha=0 outside mean-plus-alpha-cvar returns the worst-path game value "
        "of the MDP embedded in the tables (checked against --mdp when given)",
    )
    a.add_argument("--mode", choices=[m.value for m in ObjectiveMode], default=ObjectiveMode.PURE_CVAR.value)
    a.add_argument("--mdp", default=None, help="refuse tables solved for another MDP")
    a.set_defaults(func=cmd_value)

    # policy
    a = sp.add_parser("policy", help="run the optimal policy on a trace or by simulation")
    a.add_argument("--tables", required=True)
    a.add_argument("--state", required=True)
    a.add_argument("--alpha", type=float, required=True)
    run = a.add_mutually_exclusive_group()
    run.add_argument("--trace", default=None, help="file or inline sequence of states, starting at --state")
    run.add_argument("--simulate", action="store_true")
    a.add_argument("--seed", type=int, default=None)
    a.add_argument("--episodes", type=int, default=1000)
    a.add_argument("--side", choices=[s.value for s in DerivativeSide], default=DerivativeSide.RIGHT.value)
    a.add_argument("--out", default=None)
    a.add_argument("--mdp", default=None, help="refuse tables solved for another MDP")
    a.set_defaults(func=cmd_policy)

    # export-pwl
    a = sp.add_parser("export-pwl", help="write V_n(x, .) breakpoints as CSV")
    a.add_argument("--tables", required=True)
    a.add_argument("--stage", type=int, required=True)
    a.add_argument("--state", required=True)
    a.add_argument("--out", default=None)
    a.set_defaults(func=cmd_export_pwl)

    # verify
    a = sp.add_parser("verify", help="run the oracle verification suite")
    source = a.add_mutually_exclusive_group(required=True)
    source.add_argument("--mdp", default=None)
    source.add_argument("--random", action="store_true")
    a.add_argument("--count", type=int, default=200)
    a.add_argument("--seed", type=int, default=1)
    a.add_argument("--alphas", default="0.1,0.25,0.5,0.75,1.0")
    a.add_argument("--horizon", type=int, default=None)
    a.set_defaults(func=cmd_verify)

    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level or settings.log_level)
    try:
        return args.func(args)
    except CvarMdpError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    except Exception as e:
        logger.exception("unexpected failure")
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
