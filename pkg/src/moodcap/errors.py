"""Exception hierarchy shared by every module.

The CLI maps these onto exit codes: ConfigError -> 2, DataError (and its
subclasses) -> 3, everything else -> 1.
"""


class MoodcapError(Exception):
    """Base class for all package errors."""


class ConfigError(MoodcapError):
    """Invalid configuration, flags, or API misuse (wrong variant, reused tape)."""


class ShapeError(MoodcapError):
    """Tensor dimension mismatch."""


class DomainError(MoodcapError):
    """Math domain violation, e.g. log of a non-positive value."""


class NumericsError(MoodcapError):
    """NaN or Inf produced by a forward operation or found in a gradient."""


class DataError(MoodcapError):
    """Invalid or inconsistent input data."""


class ParseError(DataError):
    """Malformed file contents; message carries line number or byte offset."""
