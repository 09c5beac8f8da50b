"""Shared utilities: logging setup and input sanitization."""

from .logging import configure_logging
from .sanitize import safe_file_stem, sanitize_log_input

__all__ = [
    "configure_logging",
    "safe_file_stem",
    "sanitize_log_input",
]
