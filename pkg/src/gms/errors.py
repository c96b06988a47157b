"""Exception types shared across the package.

Invalid arguments raise plain ``ValueError``.
"""


class NumericalError(ArithmeticError):
    """A computation left its valid numerical domain (NaN, negative variance...)."""

    def __init__(self, message: str, index=None):
        super().__init__(message if index is None else f"{message} (index {index})")
        self.index = index


class TrainingDivergedError(NumericalError):
    """Training produced a non-finite loss."""


class PreconditionError(RuntimeError):
    """A required precomputation or configuration is missing."""


class ConfigError(ValueError):
    """Invalid experiment configuration; ``key`` names the offending entry."""

    def __init__(self, message: str, key: str | None = None):
        super().__init__(message)
        self.key = key
