"""Exception taxonomy shared across the package.

The CLI maps these onto exit codes: validation-type errors exit with 1,
numeric/runtime failures with 2.
"""


class SemaffineError(Exception):
    """Base class for all package errors."""


class ShapeError(SemaffineError, ValueError):
    """Operand dimensions are incompatible; the message names both shapes."""


class ContractError(SemaffineError, ValueError):
    """A documented precondition was violated (empty input, non-scalar loss, ...)."""


class ConfigError(SemaffineError, ValueError):
    """Invalid or unknown configuration key/value."""


class ParseError(SemaffineError, ValueError):
    """Malformed on-disk artifact; carries a line number when available."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class NumericError(SemaffineError, RuntimeError):
    """Non-finite values detected during computation."""
