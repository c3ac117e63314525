"""Exception hierarchy shared across the toolkit.

The CLI maps these onto exit codes: ``DataError`` -> 3, ``NumericError`` -> 4.
"""


class MetaHarError(Exception):
    """Base class for every error raised deliberately by metahar."""


class ShapeError(MetaHarError, ValueError):
    """Operands do not conform to an operation's shape contract."""


class NumericError(MetaHarError, FloatingPointError):
    """A NaN or infinity appeared in a forward or backward pass."""


class DataError(MetaHarError, ValueError):
    """Input data is malformed or cannot satisfy a request."""


class TaskError(DataError):
    """A task cannot be sampled under the requested configuration."""
