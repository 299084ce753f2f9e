"""Exception hierarchy shared by all modules."""

from __future__ import annotations


class CondExitError(Exception):
    """Base class for every error raised by this package."""


class ParameterError(CondExitError, ValueError):
    """An argument is outside its documented range."""


class DomainError(ParameterError):
    """A point or time lies outside the domain of the operation."""


class DegenerateParameterError(ParameterError):
    """A probability sits at 0 or 1 where the formula needs it strictly inside."""


class DivergentBoundError(ParameterError):
    """A bound would be infinite (e.g. the logarithm of zero)."""


class DataError(ParameterError):
    """Input data violates a precondition (non-finite, non-positive, ...)."""


class ResourceError(CondExitError):
    """The request would exceed a hard resource limit."""


class AlignmentError(CondExitError, ValueError):
    """A time is off the dyadic grid, or two objects refer to different paths."""


class ResolutionError(CondExitError, ValueError):
    """The sampled series is too coarse for the requested analysis."""


class ConfigurationError(CondExitError, ValueError):
    """A run configuration is inconsistent (e.g. violates the step contract)."""


class UndefinedResultError(CondExitError, ValueError):
    """The quantity is undefined for this input (e.g. zero total increase)."""


class SolverFailure(CondExitError):
    """The SPDE solver exceeded its clamp tolerance.

    The partial trajectory computed so far is attached as ``trajectory``.
    """

    def __init__(self, message: str, trajectory=None):
        super().__init__(message)
        self.trajectory = trajectory


class UsageError(CondExitError):
    """Invalid command-line usage or configuration key."""
