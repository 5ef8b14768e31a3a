"""
Exception hierarchy for the audit pipeline.

Each family maps onto one CLI exit code (see main.py).
"""


class AuditError(Exception):
    """Base class for all pipeline errors."""


class ConfigError(AuditError, ValueError):
    """Invalid configuration: unknown keys, out-of-range values, bad roster."""


class DataError(AuditError, ValueError):
    """Unreadable or malformed input, or data too small for the requested step."""


class ModelError(AuditError, RuntimeError):
    """Misuse of a recommender: untrained, no known input items, too few items."""


class ExperimentError(AuditError, RuntimeError):
    """A workflow stage or fold failed."""

    def __init__(self, message: str, diagnostics: dict = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
