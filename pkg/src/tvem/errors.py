"""Exception hierarchy shared by all tvem modules."""


class TvemError(Exception):
    """Base class for every error raised by this package."""


class InvalidInputError(TvemError, ValueError):
    """Malformed arguments: wrong dimensions, bad counts, out-of-range indices."""


class InvalidParamsError(TvemError, ValueError):
    """Model parameters violate their invariants (NaN, negative variance, ...)."""


class SpaceTooLargeError(TvemError):
    """Requested enumeration of a latent space larger than the configured cap."""


class DegenerateSetError(TvemError):
    """Every state of a variational set has zero joint probability."""


class DegenerateModelError(DegenerateSetError):
    """Every state of the full latent space has zero joint probability."""


class UnsupportedSpaceError(TvemError):
    """Operation is not defined for the latent space kind of the model."""


class PoolTooLargeError(TvemError):
    """A constructed candidate pool would exceed the configured cap."""


class SingularSystemError(TvemError):
    """Linear system of an M-step could not be solved even with regularization."""


class InsufficientDataError(TvemError, ValueError):
    """Not enough datapoints to initialize the requested model."""


class BudgetExceededError(TvemError):
    """Brute-force search would exceed its evaluation budget."""


class ConfigError(TvemError, ValueError):
    """Invalid run configuration."""


class MonotonicityViolation(TvemError):
    """The free energy decreased by more than the numerical tolerance.

    ``record`` carries the diagnostic data of the offending iteration.
    """

    def __init__(self, message, record=None):
        super().__init__(message)
        self.record = record or {}
