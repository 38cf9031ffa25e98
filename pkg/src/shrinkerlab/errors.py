"""Exception hierarchy. The CLI maps these onto exit codes."""


class ShrinkerLabError(Exception):
    """Base class for all errors raised by the package."""

    exit_code = 2


class ValidationError(ShrinkerLabError, ValueError):
    """Bad input: a precondition of an operation does not hold."""

    exit_code = 1


class NumericalError(ShrinkerLabError, ArithmeticError):
    """Non-convergence, instability or a degenerate discretization."""

    exit_code = 2

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})


class SearchFailure(NumericalError):
    """A bracketing search did not straddle a solution."""
