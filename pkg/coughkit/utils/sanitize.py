"""Sanitization of user-controlled strings before they reach logs or file names."""

import re
from typing import Any

_ANSI_ESCAPE = re.compile(r"\x1B(?:[@-Z\\-_]|\[[0-?]*[ -/]*[@-~])")
_UNSAFE_FILENAME_CHARS = re.compile(r"[^A-Za-z0-9._-]+")


def sanitize_log_input(data: Any) -> Any:
    """Sanitize data before logging to prevent log injection.

    Args:
        data: Data to be logged (string, dict, list, or other types)

    Returns:
        Sanitized data safe for logging
    """
    if isinstance(data, str):
        sanitized = data.replace("\n", "\\n").replace("\r", "\\r").replace("\t", "\\t")
        sanitized = _ANSI_ESCAPE.sub("", sanitized)
        if len(sanitized) > 1000:
            sanitized = sanitized[:997] + "..."
        return sanitized

    if isinstance(data, dict):
        return {key: sanitize_log_input(value) for key, value in data.items()}

    if isinstance(data, list):
        return [sanitize_log_input(item) for item in data]

    return sanitize_log_input(str(data))


def safe_file_stem(name: str, max_length: int = 120) -> str:
    """Turn an arbitrary source id into a portable file name stem.

    Args:
        name: Source identifier (often a path)
        max_length: Maximum length of the result

    Returns:
        Stem containing only letters, digits, '.', '_' and '-'
    """
    stem = _UNSAFE_FILENAME_CHARS.sub("_", name).strip("._")
    return (stem or "clip")[:max_length]
