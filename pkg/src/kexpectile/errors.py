"""Exception hierarchy shared by all modules."""


class ExpectileError(Exception):
    """Base class for package errors."""


class DomainError(ExpectileError, ValueError):
    """An argument lies outside the domain of the operation."""


class NumericalError(ExpectileError, ArithmeticError):
    """A linear-algebra or eigen routine failed."""


class ConvergenceError(NumericalError):
    """The solver hit its iteration cap.

    The partially converged diagnostics are attached as ``diagnostics``.
    """

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics
