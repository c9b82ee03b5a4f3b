"""Exception types raised across the package."""


class MoncriefError(Exception):
    """Base class for all package errors."""


class DomainError(MoncriefError, ValueError):
    """A point lies on or outside the unit circle."""


class OutOfCollarError(MoncriefError):
    """A point could not be reduced to the octagon within the word budget."""

    def __init__(self, message, point=None):
        super().__init__(message)
        self.point = point


class GroupConstructionError(MoncriefError):
    """Self-check of the surface group failed."""


class GridConstructionError(MoncriefError):
    """Ghost resolution failed while building a grid."""

    def __init__(self, message, point=None):
        super().__init__(message)
        self.point = point


class EllipticityError(MoncriefError):
    """Linearized operator lost ellipticity at some node."""

    def __init__(self, message, node=None, location=None):
        super().__init__(message)
        self.node = node
        self.location = location


class ConvergenceError(MoncriefError):
    """Newton iteration did not reach the requested tolerance.

    Attributes
    ----------
    best : ndarray or None
        Iterate with the smallest residual seen.
    history : list of float
        Residual sup-norm after every accepted step.
    amplitude : float or None
        Amplitude at which continuation failed, if applicable.
    """

    def __init__(self, message, best=None, history=None, amplitude=None):
        super().__init__(message)
        self.best = best
        self.history = list(history or [])
        self.amplitude = amplitude


class LinearSolveError(MoncriefError):
    """Sparse linear solve produced non-finite output."""


class IndefiniteMetricError(MoncriefError):
    """A supplied metric is not positive definite."""


class ConfigError(MoncriefError):
    """Invalid or unreadable run configuration."""
