"""Exception hierarchy shared by all modules."""


class DammError(Exception):
    """Base class for package errors."""


class DomainError(DammError, ValueError):
    """Parameter or argument outside the domain of a density or map."""


class SpecError(DammError, ValueError):
    """Inconsistent model specification, layout or configuration."""


class NumericError(DammError, ArithmeticError):
    """Non-finite intermediate result (score, density ratio, ...)."""

    def __init__(self, message, *, block=None, t=None):
        super().__init__(message)
        self.block = block
        self.t = t


class EstimationError(DammError, RuntimeError):
    """All optimizer starts failed."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class UnsupportedOperation(DammError, NotImplementedError):
    pass
