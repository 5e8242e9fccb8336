"""Exception hierarchy. Each class maps to a CLI exit code."""


class GibbsCausalError(Exception):
    exit_code = 1


class ConfigurationError(GibbsCausalError, ValueError):
    """Bad model or run configuration (missing column, invalid option)."""

    exit_code = 2


class DataError(GibbsCausalError, ValueError):
    """Input data violates the dataset schema."""

    exit_code = 3


class NumericError(GibbsCausalError, ArithmeticError):
    """A numerical computation produced a non-finite or degenerate result."""

    exit_code = 4

    def __init__(self, message, index=None):
        if index is not None:
            message = f"{message} (index {index})"
        super().__init__(message)
        self.index = index
