"""Exception hierarchy shared by every module of the lab."""

from typing import Any, Dict, Optional


class LabError(Exception):
    """Base class for all recoverable lab failures."""

    def __init__(self, message: str, details: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.message = message
        self.details = details or {}

    def to_dict(self) -> Dict[str, Any]:
        """Machine-readable form used by the CLI error document."""
        return {
            "error": type(self).__name__,
            "message": self.message,
            "details": self.details,
        }


class RateFunctionError(LabError):
    """Invalid rate function parametrization (parity, closures)."""


class PotentialError(LabError):
    """Invalid interaction potential."""


class DimensionError(LabError):
    """Dimension outside the range where the object exists."""


class ConfigError(LabError):
    """Run configuration failed validation."""


class HazardError(LabError):
    """Cumulative hazard could not be inverted."""


class EventLogError(LabError):
    """An operation needed the event log of a trajectory that did not keep one."""


class KrylovConvergenceError(LabError):
    """Iterative resolvent solve did not reach its tolerance."""


class PowerIterationError(LabError):
    """Operator-norm power iteration did not settle."""


class EstimatorError(LabError):
    """Estimator input is degenerate or too short."""
