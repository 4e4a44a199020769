"""Exception hierarchy shared by every module.

The CLI maps each category onto an exit code: numeric -> 1, data -> 2,
config -> 3.
"""


class PenguinError(Exception):
    """Base class for all package errors."""

    category = "numeric"


class ShapeError(PenguinError, ValueError):
    """Operand shapes are incompatible."""


class DegenerateRowError(PenguinError, ValueError):
    """A softmax row has every entry masked out."""


class NumericError(PenguinError, ArithmeticError):
    """Non-finite values, divergence, failed numerical checks."""


class ConfigError(PenguinError, ValueError):
    category = "config"


class DataError(PenguinError, ValueError):
    category = "data"
