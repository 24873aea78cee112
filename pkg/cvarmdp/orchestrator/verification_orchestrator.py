"""
Verification Orchestrator - Coordinates the oracle verification suite
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence, Tuple
import logging
import math
import time

import numpy as np

from cvarmdp.checks import (
    AgreementCheck,
    BoundaryCheck,
    CheckContext,
    ConsistencyCheck,
    DEFAULT_ALPHAS,
    DerivativeCheck,
    OptimalityCheck,
)
from cvarmdp.config import settings
from cvarmdp.exceptions import ResourceGuardError
from cvarmdp.models.mdp import AnySpec
from cvarmdp.models.schemas import ObjectiveMode, PropertyReport, VerificationReport
from cvarmdp.services.oracle import random_random_cost_spec, random_spec
from cvarmdp.services.solver import solve_finite

logger = logging.getLogger(__name__)

MEAN_MODES = (ObjectiveMode.MEAN_PLUS_ALPHA_CVAR, ObjectiveMode.MEAN_PLUS_CVAR)


@dataclass(frozen=True)
class VerificationInstance:
    """An MDP, an initial state and a horizon to verify"""
    label: str
    spec: AnySpec
    x0: int
    horizon: int
    alphas: Tuple[float, ...] = DEFAULT_ALPHAS
    mode: Optional[ObjectiveMode] = None


def random_instances(
    count: int,
    seed: int,
    horizon: Optional[int] = None,
    alphas: Sequence[float] = DEFAULT_ALPHAS,
    random_cost_every: int = 5,
    mean_cost_every: int = 3,
) -> List[VerificationInstance]:
    """
    Seeded desk-scale instances. Every `random_cost_every`-th instance has
    random one-step costs and every `mean_cost_every`-th carries mean costs,
    verified alternately in the two mean modes. Horizons are drawn from 1..3
    unless given.
    """
    streams = np.random.SeedSequence(seed).spawn(count)
    instances = []
    for i, stream in enumerate(streams):
        rng = np.random.default_rng(stream)
        mode = None
        if random_cost_every and i % random_cost_every == random_cost_every - 1:
            spec = random_random_cost_spec(rng)
        elif mean_cost_every and i % mean_cost_every == mean_cost_every - 1:
            spec = random_spec(rng, mean_costs=True)
            mode = MEAN_MODES[(i // mean_cost_every) % len(MEAN_MODES)]
        else:
            spec = random_spec(rng)
        n = horizon if horizon is not None else int(rng.integers(1, 4))
        instances.append(VerificationInstance(f"random[{i}]", spec, 0, n, tuple(alphas), mode))
    return instances


def file_instances(
    spec: AnySpec,
    horizon: int,
    alphas: Sequence[float] = DEFAULT_ALPHAS,
    label: str = "mdp",
) -> List[VerificationInstance]:
    """One instance per initial state of a given MDP"""
    return [
        VerificationInstance(f"{label}:{name}", spec, x, horizon, tuple(alphas))
        for x, name in enumerate(spec.states)
    ]


class VerificationOrchestrator:
    """
    Orchestrates the verification suite.
    Solves each instance once and runs every enabled check on the tables.
    """

    def __init__(
        self,
        enable_agreement: bool = True,
        enable_optimality: bool = True,
        enable_derivatives: bool = True,
        enable_consistency: bool = True,
        enable_boundary: bool = True,
        max_workers: Optional[int] = None,
    ):
        self.max_workers = max_workers or settings.max_workers

        self.checks = []

        if enable_agreement:
            self.checks.append(AgreementCheck())
        if enable_optimality:
            self.checks.append(OptimalityCheck())
        if enable_derivatives:
            self.checks.append(DerivativeCheck())
        if enable_consistency:
            self.checks.append(ConsistencyCheck())
        if enable_boundary:
            self.checks.append(BoundaryCheck())

    def _run_instance(self, index: int, instance: VerificationInstance) -> List[Dict[str, Any]]:
        """Solve one instance and run all checks on it"""
        try:
            tables = solve_finite(instance.spec, instance.horizon)
        except ResourceGuardError as e:
            return [{
                "check_name": check.name,
                "instance": index,
                "findings": [{
                    "property_name": check.name,
                    "instance": index,
                    "passed": True,
                    "error": 0.0,
                    "message": f"{instance.label}: skipped (guard: {e})",
                    "skipped": True,
                }],
                "execution_time_seconds": 0.0,
                "error": None,
            } for check in self.checks]

        context = CheckContext(
            index=index,
            label=instance.label,
            spec=instance.spec,
            tables=tables,
            x0=instance.x0,
            horizon=instance.horizon,
            alphas=instance.alphas,
            objective=instance.mode,
        )
        return [check.run(context) for check in self.checks]

    def verify(self, instances: Sequence[VerificationInstance], parallel: bool = True) -> VerificationReport:
        """
        Run all checks on all instances.

        Args:
            instances: The instances to verify
            parallel: Whether to fan instances out over a thread pool

        Returns:
            Merged report, ordered by instance index
        """
        start_time = time.time()

        if parallel and len(instances) > 1:
            with ThreadPoolExecutor(max_workers=self.max_workers) as executor:
                per_instance = list(executor.map(self._run_instance, range(len(instances)), instances))
        else:
            per_instance = [self._run_instance(i, inst) for i, inst in enumerate(instances)]

        check_results = [result for results in per_instance for result in results]
        properties = self._generate_summary(check_results)

        elapsed = time.time() - start_time
        logger.info("verified %d instances in %.3fs", len(instances), elapsed)
        return VerificationReport(
            instances=len(instances),
            properties=properties,
            execution_time_seconds=elapsed,
        )

    def _generate_summary(self, check_results: List[Dict[str, Any]]) -> List[PropertyReport]:
        """Merge findings into one report per property, in first-seen order"""
        reports: Dict[str, PropertyReport] = {}

        def report(name: str) -> PropertyReport:
            if name not in reports:
                reports[name] = PropertyReport(name=name)
            return reports[name]

        for result in check_results:
            if result.get("error"):
                entry = report(result["check_name"])
                entry.failed += 1
                entry.messages.append(f"instance {result['instance']}: {result['error']}")
                continue
            for finding in result.get("findings", []):
                entry = report(finding["property_name"])
                if finding["skipped"]:
                    entry.skipped += 1
                    entry.messages.append(finding["message"])
                elif finding["passed"]:
                    entry.passed += 1
                else:
                    entry.failed += 1
                    if finding["message"]:
                        entry.messages.append(finding["message"])
                if not math.isnan(finding["error"]):
                    entry.max_error = max(entry.max_error, finding["error"])

        for entry in reports.values():
            if entry.failed:
                logger.warning("%s: %d failed", entry.name, entry.failed)
        return list(reports.values())


def format_report(report: VerificationReport) -> str:
    """Plain-text rendering, one line per property"""
    lines = []
    for prop in report.properties:
        status = "PASS" if prop.ok else "FAIL"
        if prop.passed == 0 and prop.failed == 0 and prop.skipped:
            status = "SKIPPED (guard)"
        lines.append(
            f"{status:<16} {prop.name}: passed={prop.passed} failed={prop.failed} "
            f"skipped={prop.skipped} max_error={prop.max_error:.12g}"
        )
        if not prop.ok or status.startswith("SKIPPED"):
            for message in prop.messages[:5]:
                lines.append(f"    {message}")
    lines.append(f"instances={report.instances}")
    return "\n".join(lines)


def create_orchestrator(**kwargs) -> VerificationOrchestrator:
    """Factory function to create a verification orchestrator"""
    return VerificationOrchestrator(**kwargs)
