"""Logging and run audit configuration models."""

from pydantic import Field

from .base_models import LogFormat, LogLevel, StrictModel


class LoggingConfig(StrictModel):
    """Logging and audit configuration."""

    log_level: LogLevel = Field(LogLevel.INFO, description="Logging level")
    log_format: LogFormat = Field(LogFormat.TEXT, description="Log output format")
    audit_enabled: bool = Field(True, description="Whether the run audit log is written")
