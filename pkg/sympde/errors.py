"""Exception hierarchy shared by the solver, the networks and the CLI."""

from typing import Optional


class SymPdeError(Exception):
    """Base class for every error raised by sympde."""


class StructuralError(SymPdeError, ValueError):
    """Shape, length or grid mismatch."""


class NumericError(SymPdeError, ArithmeticError):
    """A non-finite value appeared where a finite one is required."""

    def __init__(self, message: str, location: Optional[str] = None):
        self.location = location
        if location:
            message = f"{message} (at {location})"
        super().__init__(message)


class UsageError(SymPdeError, RuntimeError):
    """An API was called out of order."""


class DomainError(SymPdeError, ValueError):
    """An argument lies outside the domain an operation is defined on."""


class ConfigError(SymPdeError, ValueError):
    """Invalid configuration: unknown names, bad parameters, unusable activations."""


class UnsupportedError(SymPdeError, NotImplementedError):
    """The problem or network does not provide what the operation needs."""
