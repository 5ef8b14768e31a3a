"""
Logging Configuration

Provides centralized logging for the audit pipeline with:
- Console output (INFO level, overridable via AUDIT_LOG_LEVEL)
- File output (DEBUG level) under AUDIT_LOG_DIR
- Structured formatting with timestamps
"""

import logging
import os
from pathlib import Path
from datetime import datetime

# One log file per process; every module logger writes into it.
_LOG_FILE = None


def _log_file(log_dir: str) -> str:
    global _LOG_FILE
    if _LOG_FILE is None:
        Path(log_dir).mkdir(parents=True, exist_ok=True)
        timestamp = datetime.now().strftime("%Y%m%d_%H%M%S")
        _LOG_FILE = os.path.join(log_dir, f"popularity_audit_{timestamp}.log")
    return _LOG_FILE


def setup_logger(name: str, log_dir: str = "logs") -> logging.Logger:
    """
    Set up a logger with both console and file handlers.

    Args:
        name: Logger name (usually __name__ of the module)
        log_dir: Directory to store log files

    Returns:
        Configured logger instance
    """
    logger = logging.getLogger(name)
    logger.setLevel(logging.DEBUG)

    # Avoid duplicate handlers if logger already configured
    if logger.handlers:
        return logger

    console_level = os.getenv("AUDIT_LOG_LEVEL", "INFO").upper()
    console_handler = logging.StreamHandler()
    console_handler.setLevel(getattr(logging, console_level, logging.INFO))
    console_handler.setFormatter(logging.Formatter('%(levelname)s - %(message)s'))

    file_handler = logging.FileHandler(_log_file(log_dir), encoding='utf-8')
    file_handler.setLevel(logging.DEBUG)
    file_handler.setFormatter(logging.Formatter(
        '%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        datefmt='%Y-%m-%d %H:%M:%S'
    ))

    logger.addHandler(console_handler)
    logger.addHandler(file_handler)
    logger.propagate = False

    logger.debug(f"Logger initialized. Logs saved to: {_LOG_FILE}")

    return logger


def get_logger(name: str) -> logging.Logger:
    """
    Get or create a logger for the given module.

    Args:
        name: Logger name (usually __name__ of the module)

    Returns:
        Logger instance
    """
    return setup_logger(name, log_dir=os.getenv("AUDIT_LOG_DIR", "logs"))
