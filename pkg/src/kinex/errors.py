"""Exception hierarchy shared by all kinex modules.

Everything user-facing derives from :class:`KinexError` so the CLI can map
runtime failures to a single exit code. ``DomainError`` doubles as a
``ValueError`` so library callers can catch it the usual way.
"""


class KinexError(Exception):
    """Base class for all errors raised by kinex."""


class ConfigError(KinexError):
    """A run configuration is inconsistent or out of the supported range."""


class DomainError(KinexError, ValueError):
    """Numeric input violates a documented precondition."""


class DataError(KinexError, ValueError):
    """Input data is malformed (non-finite values, wrong shape, bad file)."""


class StabilityError(KinexError):
    """The explicit time stepper produced structurally negative values.

    Raised with a hint to reduce the step size; the loss term has unit
    rate, so any dt <= 1 keeps densities nonnegative.
    """
