"""Exception hierarchy shared by all modules."""


class GridSentryError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(GridSentryError, ValueError):
    """Input data violates a documented invariant."""


class ModelError(GridSentryError):
    """The network model is structurally unusable (disconnected, singular)."""


class GeometricError(GridSentryError):
    """A subspace computation was asked for something infeasible."""


class DesignError(GridSentryError):
    """Filter or gain synthesis failed."""


class SimulationError(GridSentryError):
    """Time integration failed or was handed inconsistent data."""

    def __init__(self, message, last_time=None):
        super().__init__(message)
        self.last_time = last_time


class DetectableAttackError(GridSentryError):
    """Raised when an undetectable attack is requested for a detectable set."""
