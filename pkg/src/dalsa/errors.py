"""Exception and warning types shared across the package.

Exit-code mapping used by the CLI: usage errors exit 1, data errors exit 2,
numerical failures exit 3.
"""


class DalsaError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class UsageError(DalsaError):
    """Bad invocation: unknown flags, inconsistent options."""

    exit_code = 1


class DataError(DalsaError):
    """Invalid or inconsistent input data: missing files, dimension
    mismatches, empty selections, unknown class ids."""

    exit_code = 2


class NumericalError(DalsaError):
    """Numerical failure that survives all configured fallbacks."""

    exit_code = 3


class ConstantChannelWarning(UserWarning):
    """A channel had (numerically) zero spread inside the mask."""


class ConvergenceWarning(UserWarning):
    """An iterative solver stopped before reaching its tolerance."""


class WeightSumWarning(UserWarning):
    """The per-patient weight sum deviates from its expected total."""
