"""Exception hierarchy shared across the package."""


class AdaEmbedError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(AdaEmbedError, ValueError):
    """Operand shapes do not agree."""


class DegenerateInputError(AdaEmbedError, ValueError):
    """A row that must be normalized has (near) zero norm."""


class NumericError(AdaEmbedError, ArithmeticError):
    """Non-finite values where finite ones are required."""


class ContractError(AdaEmbedError, RuntimeError):
    """An operation was called outside of its contract."""


class ConfigError(AdaEmbedError, ValueError):
    """Invalid configuration, dataset spec, or hyperparameter."""


class DivergenceError(AdaEmbedError, RuntimeError):
    """Training produced a non-finite loss or parameter."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step
