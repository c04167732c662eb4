"""Exception types raised across the package."""


class HsgdlmError(Exception):
    """Base class for all package errors."""


class DataError(HsgdlmError, ValueError):
    """Malformed or insufficient input data."""


class ConfigError(HsgdlmError, ValueError):
    """Invalid configuration value; the message names the offending field."""


class NumericalError(HsgdlmError, ArithmeticError):
    """A numerical degeneracy that cannot be repaired locally."""


class DegenerateWeightsError(NumericalError):
    """Every importance weight is zero."""


class UnsupportedModelError(HsgdlmError):
    """Requested operation is not defined for the configured feature model."""


class LookaheadError(HsgdlmError):
    """A position was decided with data at or after the move it is scored on."""
