"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid configuration, hyperparameter or argument value."""


class ShapeError(ValueError):
    """Array dimensions do not match what an operation expects."""


class NumericError(ArithmeticError):
    """A non-finite value showed up where only finite values are allowed."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index
