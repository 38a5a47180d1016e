class ConfigurationError(ValueError):
    """Invalid environment, policy, or run configuration."""


class EstimationError(ArithmeticError):
    """A non-finite quantity appeared while estimating advantages or ratios."""


class BracketError(ArithmeticError):
    """The temperature dual could not be bracketed."""
