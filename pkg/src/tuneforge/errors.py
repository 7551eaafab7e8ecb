"""Exception hierarchy shared across the package."""

from __future__ import annotations


class TuneforgeError(Exception):
    """Base class for all package errors."""


class ParameterError(TuneforgeError):
    """Bad argument or precondition violation at an API boundary."""


class AnalysisError(TuneforgeError):
    """A statistical analysis could not be carried out on the given data."""


class AdapterError(TuneforgeError):
    """The system-under-test adapter failed outside of a normal crash outcome."""


class CrashError(TuneforgeError):
    """Raised by adapters when the target system crashed for a configuration."""

    def __init__(self, diagnostic: str = "crash"):
        super().__init__(diagnostic)
        self.diagnostic = diagnostic


class ExpressionError(TuneforgeError):
    """Malformed or unresolvable predicate/compute expression."""

    def __init__(self, message: str, symbol: str | None = None):
        super().__init__(message)
        self.symbol = symbol


class CompileError(TuneforgeError):
    """Document compilation failed (dangling reference, cycle, mismatched inputs)."""


class DocumentError(TuneforgeError):
    """A procedural document is structurally invalid or incompatible."""
