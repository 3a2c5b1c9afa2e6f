"""Exception hierarchy shared across the toolkit."""


class StairVerifyError(Exception):
    """Base class for all toolkit errors."""


class ParameterError(StairVerifyError):
    """Invalid construction parameters (bad shapes, non-increasing grids, ...)."""


class DomainError(StairVerifyError):
    """Query outside a function or network domain (signals stale bounds)."""


class InputError(StairVerifyError):
    """Malformed user input: files, queries, CLI arguments."""


class CapabilityError(StairVerifyError):
    """Request exceeds a documented size/enumeration limit."""


class NumericalError(StairVerifyError):
    """Numerical failure inside a solver (cycling guard, singular basis)."""


class FormulationError(StairVerifyError):
    """Inconsistent bounds or empty slices while building constraints."""
