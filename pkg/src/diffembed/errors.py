"""Exception types shared across the package."""


class DataError(ValueError):
    """Input files or in-memory data do not satisfy the expected format."""


class ConfigError(ValueError):
    """Invalid or inconsistent hyperparameters."""


class NumericalError(RuntimeError):
    """Training diverged (non-finite loss or parameters)."""
