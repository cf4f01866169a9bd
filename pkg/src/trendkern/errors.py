"""Exception hierarchy shared across the package."""


class TrendKernError(Exception):
    """Base class for every error raised by trendkern."""


class DataFormatError(TrendKernError):
    """A dataset or taxonomy file does not parse under its declared format."""


class ValidationError(TrendKernError):
    """Parsed data violates a structural invariant."""


class ConfigError(TrendKernError):
    """Invalid or inconsistent configuration."""


class ShapeError(TrendKernError, ValueError):
    """Operand shapes are incompatible for a primitive."""


class NonFiniteError(TrendKernError, FloatingPointError):
    """A NaN or Inf appeared in a forward value, gradient, or loss."""
