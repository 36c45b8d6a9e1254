"""Exception hierarchy shared across the package."""


class AlcpdError(Exception):
    """Base class for all package errors."""


class InvalidInputError(AlcpdError, ValueError):
    """Arguments violate an operation's preconditions."""


class DegenerateInputError(InvalidInputError):
    """Input is well-formed but degenerate (e.g. zero variance)."""


class NumericalFailure(AlcpdError, ArithmeticError):
    """A numerical routine failed (Cholesky breakdown, non-finite ELBO, ...)."""


class ExhaustedCandidatesError(AlcpdError):
    """No candidate locations remain for selection."""


class BudgetExhausted(AlcpdError):
    """An oracle was queried beyond its budget."""


class ParseError(InvalidInputError):
    """Malformed dataset or configuration file."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
