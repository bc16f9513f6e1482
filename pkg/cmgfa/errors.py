"""Exception hierarchy shared by the estimation, experiment and I/O layers."""
from __future__ import annotations

from typing import Optional

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4
EXIT_NOT_CONVERGED = 5


class CmgfaError(RuntimeError):
    """Base class; the message is a snake_case code, optionally with detail."""

    exit_code = EXIT_UNEXPECTED

    def __init__(self, code: str, *, detail: Optional[str] = None) -> None:
        message = code if not detail else f"{code}: {detail}"
        super().__init__(message)
        self.code = code
        self.detail = detail


class InvalidArgumentError(CmgfaError, ValueError):
    """Raised when inputs violate an operation's preconditions."""

    exit_code = EXIT_USAGE


class ConfigurationError(CmgfaError):
    """Raised when environment or file configuration cannot be used."""

    exit_code = EXIT_USAGE


class SingularityError(CmgfaError):
    """Raised when a q x q system inside a component cannot be solved."""

    exit_code = EXIT_NUMERIC

    def __init__(self, code: str, *, component: Optional[int] = None, detail: Optional[str] = None) -> None:
        if component is not None:
            detail = f"component={component}" + (f" {detail}" if detail else "")
        super().__init__(code, detail=detail)
        self.component = component


class NumericError(CmgfaError):
    """Raised when every component density underflows for an observation."""

    exit_code = EXIT_NUMERIC

    def __init__(self, code: str, *, row: Optional[int] = None) -> None:
        super().__init__(code, detail=None if row is None else f"row={row}")
        self.row = row


class EmptyComponentError(CmgfaError):
    """Raised when a component's effective count drops below the usable minimum."""

    exit_code = EXIT_NUMERIC

    def __init__(self, component: int, count: float, minimum: float) -> None:
        super().__init__(
            "empty_component",
            detail=f"component={component} n_g={count:.6g} minimum={minimum:g}",
        )
        self.component = component
        self.count = count
        self.minimum = minimum


class ParseError(CmgfaError):
    """Raised when a CSV or model file cannot be parsed; carries the location."""

    exit_code = EXIT_DATA

    def __init__(self, code: str, *, row: Optional[int] = None, column: Optional[str] = None) -> None:
        location = []
        if row is not None:
            location.append(f"row={row}")
        if column is not None:
            location.append(f"column={column}")
        super().__init__(code, detail=" ".join(location) or None)
        self.row = row
        self.column = column


class UnknownMixtureError(InvalidArgumentError):
    """Raised for a built-in mixture id that does not exist."""


__all__ = [
    "CmgfaError",
    "ConfigurationError",
    "EmptyComponentError",
    "InvalidArgumentError",
    "NumericError",
    "ParseError",
    "SingularityError",
    "UnknownMixtureError",
    "EXIT_OK",
    "EXIT_UNEXPECTED",
    "EXIT_USAGE",
    "EXIT_DATA",
    "EXIT_NUMERIC",
    "EXIT_NOT_CONVERGED",
]
