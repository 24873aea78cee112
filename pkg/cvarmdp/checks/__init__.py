"""
Verification Checks Module
"""
from cvarmdp.checks.base_check import BaseCheck, CheckContext, CheckFinding, DEFAULT_ALPHAS
from cvarmdp.checks.agreement_check import AgreementCheck
from cvarmdp.checks.optimality_check import OptimalityCheck
from cvarmdp.checks.derivative_check import DerivativeCheck
from cvarmdp.checks.consistency_check import ConsistencyCheck
from cvarmdp.checks.boundary_check import BoundaryCheck

__all__ = [
    "BaseCheck",
    "CheckContext",
    "CheckFinding",
    "DEFAULT_ALPHAS",
    "AgreementCheck",
    "OptimalityCheck",
    "DerivativeCheck",
    "ConsistencyCheck",
    "BoundaryCheck",
]
