"""Exception hierarchy.

Validation-type errors map to CLI exit code 2, numerical failures to 3.
"""


class EscaviarError(Exception):
    """Base class for all package errors."""


class ValidationError(EscaviarError, ValueError):
    """Input data or configuration violates a documented invariant."""


class ParseError(ValidationError):
    """A file could not be parsed."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class DomainError(ValidationError):
    """A value lies outside the mathematical domain of an operation."""


class ConfigError(ValidationError):
    """Malformed or inconsistent run configuration."""


class NumericalError(EscaviarError, ArithmeticError):
    """A computation produced non-finite or otherwise unusable values."""


class ScalingError(NumericalError):
    """Trailing high-frequency sum is zero, so the scaling ratio is undefined."""


class EstimationError(NumericalError):
    """Parameter estimation failed (no feasible start, frozen chain, ...)."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
