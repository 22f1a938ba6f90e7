"""Exception types shared across the package."""


class PvPostError(Exception):
    """Base class for all package errors."""


class DomainError(PvPostError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class ConfigError(PvPostError, ValueError):
    """A configuration value is missing or invalid."""


class ParseError(PvPostError, ValueError):
    """A data file row could not be parsed."""

    def __init__(self, message, row=None):
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)
        self.row = row


class SchemaError(ParseError):
    """A data file does not follow the expected column layout."""


class ValidationError(PvPostError, ValueError):
    """Parsed data violates a dataset invariant."""


class TrainingError(PvPostError, RuntimeError):
    """Model training failed (non-finite loss, no usable trial, ...)."""
