"""
Exception hierarchy. Each error carries the exit code the CLI reports.
"""


class CvarMdpError(Exception):
    """Base class for all cvarmdp errors"""
    exit_code = 1


class SpecValidationError(CvarMdpError, ValueError):
    """Raised when an MDP document or spec violates the schema or its invariants."""
    exit_code = 2

    def __init__(self, message: str, location: str = ""):
        self.location = location
        super().__init__(f"{location}: {message}" if location else message)


class DomainError(CvarMdpError, ValueError):
    """Raised for queries outside a function domain, stage range or state set."""
    exit_code = 2


class ResourceGuardError(CvarMdpError, RuntimeError):
    """Raised when a configured size guard would be exceeded."""
    exit_code = 3


class ConvergenceError(ResourceGuardError):
    """Raised when value iteration does not reach the requested accuracy."""


class InfeasibleTraceError(CvarMdpError, ValueError):
    """Raised when an observed transition has zero probability."""
    exit_code = 4


class VerificationFailure(CvarMdpError):
    """Raised when at least one verification property fails."""
    exit_code = 5


class PwlShapeError(CvarMdpError, AssertionError):
    """Raised when a piecewise-linear function breaks its structural invariants."""
    exit_code = 1
