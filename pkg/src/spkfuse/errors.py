"""Exception types shared across the package."""


class SpkfuseError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(SpkfuseError):
    """A tensor shape does not conform; the message names the offending axis."""


class ConfigError(SpkfuseError):
    """Invalid or inconsistent configuration values."""


class DataError(SpkfuseError):
    """Malformed or missing input data (audio, trial lists, checkpoints)."""


class NumericError(SpkfuseError):
    """Numeric failure such as NaN/Inf values or a zero-norm vector."""


class UsageError(SpkfuseError):
    """Command line misuse."""
