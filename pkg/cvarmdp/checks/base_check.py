"""
Base Check Class - Foundation for all verification checks
"""
from abc import ABC, abstractmethod
from dataclasses import asdict, dataclass
from typing import Any, Dict, List, Optional, Tuple
import logging
import time

from cvarmdp.exceptions import ResourceGuardError
from cvarmdp.models.mdp import AnySpec
from cvarmdp.models.schemas import ObjectiveMode
from cvarmdp.services.solver import ValueTables

logger = logging.getLogger(__name__)

DEFAULT_ALPHAS: Tuple[float, ...] = (0.1, 0.25, 0.5, 0.75, 1.0)


@dataclass
class CheckFinding:
    """One observation of a verification property on one instance"""
    property_name: str
    instance: int
    passed: bool
    error: float = 0.0
    message: str = ""
    skipped: bool = False


@dataclass
class CheckContext:
    """An instance under verification together with its solved tables"""
    index: int
    label: str
    spec: AnySpec
    tables: ValueTables
    x0: int
    horizon: int
    alphas: Tuple[float, ...] = DEFAULT_ALPHAS
    objective: Optional[ObjectiveMode] = None

    @property
    def mode(self) -> ObjectiveMode:
        if self.objective is not None:
            return self.objective
        if self.tables.source_spec.has_mean_costs:
            return ObjectiveMode.MEAN_PLUS_ALPHA_CVAR
        return ObjectiveMode.PURE_CVAR


class BaseCheck(ABC):
    """Base class for all verification checks"""

    def __init__(self, name: str, description: str, tolerance: float = 1e-9):
        self.name = name
        self.description = description
        self.tolerance = tolerance

    @abstractmethod
    def evaluate(self, context: CheckContext) -> List[CheckFinding]:
        """Check the property on one instance and return findings"""
        pass

    def _compare(
        self,
        property_name: str,
        context: CheckContext,
        actual: float,
        expected: float,
        what: str,
        tolerance: Optional[float] = None,
    ) -> CheckFinding:
        """Finding for |actual - expected| within tolerance scaled by max(1, |expected|)"""
        tol = self.tolerance if tolerance is None else tolerance
        error = abs(actual - expected)
        passed = error <= tol * max(1.0, abs(expected))
        message = "" if passed else f"{context.label}: {what}: got {actual!r}, expected {expected!r}"
        return CheckFinding(property_name, context.index, passed, error, message)

    def _skipped(self, property_name: str, context: CheckContext, reason: str) -> CheckFinding:
        return CheckFinding(property_name, context.index, True, message=f"{context.label}: skipped ({reason})", skipped=True)

    def run(self, context: CheckContext) -> Dict[str, Any]:
        """Run the check"""
        start_time = time.time()

        try:
            findings = self.evaluate(context)
            error = None
        except ResourceGuardError as e:
            findings = [self._skipped(self.name, context, f"guard: {e}")]
            error = None
        except Exception as e:
            logger.exception("check %s failed on %s", self.name, context.label)
            findings = []
            error = f"{type(e).__name__}: {e}"

        return {
            "check_name": self.name,
            "instance": context.index,
            "findings": [asdict(f) for f in findings],
            "execution_time_seconds": time.time() - start_time,
            "error": error,
        }
