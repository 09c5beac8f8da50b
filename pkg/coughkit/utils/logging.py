"""structlog configuration."""

import logging
import sys

import structlog

from coughkit.config.base_models import LogFormat, LogLevel


def configure_logging(
    level: LogLevel = LogLevel.INFO,
    log_format: LogFormat = LogFormat.TEXT,
) -> None:
    """Configure structlog for the process.

    Args:
        level: Minimum level emitted
        log_format: JSON lines or human-readable console output
    """
    renderer: structlog.types.Processor
    if log_format == LogFormat.JSON:
        renderer = structlog.processors.JSONRenderer(sort_keys=True)
    else:
        renderer = structlog.dev.ConsoleRenderer(colors=False)

    structlog.configure(
        processors=[
            structlog.contextvars.merge_contextvars,
            structlog.processors.add_log_level,
            structlog.processors.TimeStamper(fmt="iso", utc=True),
            structlog.processors.StackInfoRenderer(),
            structlog.processors.format_exc_info,
            renderer,
        ],
        wrapper_class=structlog.make_filtering_bound_logger(
            getattr(logging, level.value)
        ),
        # stderr is looked up per logger; it may have been redirected since configure()
        logger_factory=lambda *args: structlog.PrintLogger(file=sys.stderr),
        cache_logger_on_first_use=False,
    )
