"""Exception types shared across the pipeline."""

from __future__ import annotations


class TimeOnTaskError(Exception):
    """Base class for all package errors."""


class ConfigurationError(TimeOnTaskError):
    """Bad input contract: missing columns, invalid settings."""


class InsufficientData(TimeOnTaskError):
    """Too few points for the requested operation."""

    code = "insufficient_data"


class EstimationError(TimeOnTaskError):
    """A time-on-task quantity is undefined for the given fit.

    ``code`` is one of ``cannot_split_on_off``, ``degenerate_weights`` or
    ``no_middle_components``.
    """

    def __init__(self, code: str, message: str | None = None) -> None:
        super().__init__(message or code)
        self.code = code
