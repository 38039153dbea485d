"""Exception types shared across the package."""


class AfemError(Exception):
    """Base class for all errors raised by :mod:`afem`."""


class InputError(AfemError, ValueError):
    """Invalid arguments: bad ids, mismatched meshes, out-of-range parameters."""


class AssemblyError(AfemError):
    """Raised when a mesh cannot be assembled (e.g. degenerate elements)."""


class NumericalError(AfemError, ArithmeticError):
    """Breakdown of an iterative or direct solver."""

    def __init__(self, message, **diagnostics):
        super().__init__(message)
        self.diagnostics = diagnostics
