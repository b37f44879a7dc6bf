"""Exception hierarchy shared by the kernels, services and CLI.

Every error carries the process exit code the CLI reports for it.
"""

from typing import Optional


class BenchError(Exception):
    """Base class for all benchmark errors (runtime failures by default)."""

    exit_code = 3


class ConfigError(BenchError):
    """Invalid app configuration, unknown app id, malformed model file."""

    exit_code = 2


class DomainError(BenchError, ValueError):
    """An argument outside the domain of an operation."""


class RangeError(DomainError):
    """A value that cannot be represented in the requested format."""


class RealTimeViolation(DomainError):
    """Processing does not fit in its acquisition window."""


class FormatError(BenchError, ValueError):
    """A signal or model file that does not match its declared layout."""


class StateError(BenchError, RuntimeError):
    """An operation called before the state it needs exists."""


class NumericError(BenchError, ArithmeticError):
    """Singular matrices, non-finite losses and similar numeric failures."""


class DataError(BenchError, ValueError):
    """A reference data row that fails its integrity checks."""

    def __init__(self, message: str, row: Optional[int] = None, context: Optional[str] = None):
        self.row = row
        self.context = context
        where = []
        if row is not None:
            where.append(f"row {row}")
        if context:
            where.append(context)
        prefix = f"[{', '.join(where)}] " if where else ""
        super().__init__(prefix + message)
