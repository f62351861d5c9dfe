"""
Exception types raised across the package.

Input problems (shapes, parameter domains, malformed files, configs) are
``ValueError`` subclasses; numerical and file-integrity failures are not.
"""


class FreecondError(Exception):
    """Base class of every error raised by the package."""


class DimensionError(FreecondError, ValueError):
    """Array shapes do not fit together."""


class DomainError(FreecondError, ValueError):
    """A value lies outside the domain an operation accepts."""


class NonFiniteError(DomainError):
    """An array holds NaN or infinite values."""


class ConfigError(FreecondError, ValueError):
    """A run configuration is invalid."""


class ParseError(FreecondError, ValueError):
    """A text file could not be parsed.

    Parameters
    ----------
    message : str
        What went wrong.
    line : int | None
        The 1-based line number of the offending line, header included.
    """

    def __init__(self, message: str, line: int | None = None) -> None:
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ConflictError(FreecondError, ValueError):
    """Two records claim the same key with different values."""


class IntegrityError(FreecondError):
    """Stored or computed data failed an integrity check."""
