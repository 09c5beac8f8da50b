"""Process-level runtime settings read from the environment."""

import os

from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict

from .base_models import LogLevel


class RuntimeSettings(BaseSettings):
    """Settings that belong to the process rather than to an experiment."""

    model_config = SettingsConfigDict(
        env_prefix="COUGHKIT_",
        env_file=".env",
        env_file_encoding="utf-8",
        extra="ignore",
    )

    threads: int | None = Field(
        None,
        description="Upper bound on worker threads for per-clip parallel stages",
        ge=1,
    )
    log_level: LogLevel | None = Field(None, description="Overrides logging.log_level")

    def max_workers(self) -> int:
        """Worker count for thread pools."""
        available = os.cpu_count() or 1
        if self.threads is None:
            return available
        return min(self.threads, available)
