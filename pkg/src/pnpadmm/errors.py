"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Array shapes are incompatible with the requested operation."""


class ConfigError(ValueError):
    """A solver or experiment parameter is out of range."""


class ImageFormatError(OSError):
    """An image file has a malformed header or a truncated payload."""


class NumericalError(ArithmeticError):
    """An iterate became non-finite or a numerical routine failed."""


class ConvergenceError(NumericalError):
    """An iterative routine did not reach its tolerance."""
