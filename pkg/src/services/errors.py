from typing import Any, Dict, Optional


class NdclError(ValueError):
    """Base class for every error raised by the objective library."""


class NumericalError(NdclError):
    """Non-finite values or degenerate geometry (zero norms, vanishing sums)."""

    def __init__(self, message: str, coordinate: Optional[int] = None):
        super().__init__(message)
        self.coordinate = coordinate


class InvalidParameterError(NdclError):
    """An argument is outside its documented range."""


class PlanError(NdclError):
    """A split plan cannot be generated or summarised."""


class StaleCacheError(NdclError):
    """A forward cache no longer matches the model parameters."""


class TrainingError(NdclError):
    """
    Training aborted.

    Carries the iteration index and, for non-finite losses, a dump of the
    offending batch so the failure can be replayed.
    """

    def __init__(self, message: str, iteration: int, dump: Optional[Dict[str, Any]] = None):
        super().__init__(f"iteration {iteration}: {message}")
        self.iteration = iteration
        self.dump = dump or {}
