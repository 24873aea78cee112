"""
Verification Orchestrator Module
"""
from cvarmdp.orchestrator.verification_orchestrator import (
    VerificationInstance,
    VerificationOrchestrator,
    create_orchestrator,
    file_instances,
    format_report,
    random_instances,
)

__all__ = [
    "VerificationInstance",
    "VerificationOrchestrator",
    "create_orchestrator",
    "file_instances",
    "format_report",
    "random_instances",
]
