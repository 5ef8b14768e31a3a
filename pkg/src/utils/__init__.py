"""Logging, configuration, errors and report helpers."""

__version__ = "0.1.0"
