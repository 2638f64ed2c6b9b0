class PeridotError(Exception):
    """Base class for all errors raised by this package."""


class DomainError(PeridotError, ValueError):
    """An argument lies outside the domain of an operation (e.g. u >= q)."""


class ValidationError(PeridotError, ValueError):
    """Input data is structurally invalid (non-bijective table, non-cyclic member, ...)."""


class ParameterError(PeridotError, ValueError):
    """Construction or planning parameters violate their preconditions."""


class StateError(PeridotError):
    """An object is not in the state an operation requires."""


class NotFoundError(PeridotError):
    """A search found no admissible value."""


class BackpressureError(PeridotError):
    """The identification engine cannot accept more buffered packets."""
