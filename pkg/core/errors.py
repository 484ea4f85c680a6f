# core/errors.py
# Exception hierarchy shared by the solver, the instance readers and the CLI


class LpqpError(Exception):
    """Base class for every error raised by this package."""


class ModelError(LpqpError, ValueError):
    """Invalid model, assignment or marginals (shape, range or value)."""


class ConfigError(LpqpError, ValueError):
    """Invalid solver configuration."""


class FormatError(LpqpError):
    """Malformed instance file (UAI or native JSON)."""

    def __init__(self, message, factor_index=None):
        if factor_index is not None:
            message = f"factor {factor_index}: {message}"
        super().__init__(message)
        self.factor_index = factor_index


class StateSpaceTooLarge(LpqpError):
    """Raised by the enumeration oracles when the joint state space is too big."""

    def __init__(self, size, limit):
        super().__init__(f"state space of {size} configurations exceeds the limit of {limit}")
        self.size = size
        self.limit = limit
