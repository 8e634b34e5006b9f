"""Exception types raised across the package."""


class LowsplitError(Exception):
    """Base class for all package errors."""


class InvalidInputError(LowsplitError, ValueError):
    """Non-finite or malformed numerical input."""


class InvalidConfigError(LowsplitError, ValueError):
    """Inconsistent configuration (step grid, ranks, tolerances)."""


class SingularSketchError(LowsplitError):
    """The Gram matrix of a sketch is numerically singular."""


class AccuracyNotReachedError(LowsplitError):
    """A matrix-exponential action could not meet its tolerance.

    ``estimate`` holds the best available result and ``error_bound`` the
    accumulated a posteriori error estimate for it.
    """

    def __init__(self, message, estimate=None, error_bound=None):
        super().__init__(message)
        self.estimate = estimate
        self.error_bound = error_bound


class StiffnessDetectedError(LowsplitError):
    """The explicit inner solver hit step-size underflow or its step budget."""

    def __init__(self, message, t=None, h=None):
        super().__init__(message)
        self.t = t
        self.h = h


class ProblemTooLargeError(LowsplitError):
    """Dense reference requested above the densification guard."""


class ToleranceNotReachedError(LowsplitError):
    """Adaptive rangefinder exhausted its basis budget."""

    def __init__(self, message, estimate=None):
        super().__init__(message)
        self.estimate = estimate


class IllConditionedCoreError(LowsplitError):
    """The Nystrom core has no usable singular values."""


class UndefinedRelativeError(LowsplitError, ZeroDivisionError):
    """Relative error against a zero reference."""


class SimulationDivergedError(LowsplitError):
    """Non-finite state encountered during a simulation."""

    def __init__(self, message, last_good=None, t=None):
        super().__init__(message)
        self.last_good = last_good
        self.t = t
