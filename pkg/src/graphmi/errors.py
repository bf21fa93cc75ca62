"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operand shapes are incompatible with the requested operation."""


class DataFormatError(ValueError):
    """A dataset file is malformed; message carries file and line number."""


class ConfigError(ValueError):
    """A configuration value or key is invalid."""


class NumericError(ArithmeticError):
    """A non-finite value appeared where a finite one is required."""
