"""Component factory: configuration loading and pipeline construction for CLI commands."""

from pathlib import Path
from typing import Optional

import structlog

from coughkit.config.loader import (
    ConfigurationError,
    find_config_file,
    load_config_from_path,
    validate_checkpoint_refs,
)
from coughkit.config.models import ExperimentConfig
from coughkit.config.settings import RuntimeSettings
from coughkit.core.pipeline import PipelineRunner
from coughkit.utils.logging import configure_logging
from coughkit.utils.sanitize import sanitize_log_input

logger = structlog.get_logger(__name__)


class ComponentFactory:
    """Factory for the objects a CLI command needs."""

    @staticmethod
    def create_settings() -> RuntimeSettings:
        return RuntimeSettings()

    @staticmethod
    def load_config(
        config_file: Optional[Path] = None,
        seed: Optional[int] = None,
        out_dir: Optional[Path] = None,
    ) -> ExperimentConfig:
        """Load the experiment config and apply command-line overrides.

        Without --config the nearest coughkit.json/.yaml up the tree is used, and
        failing that the built-in defaults.

        Raises:
            ConfigurationError: If the file cannot be loaded or validated
        """
        if config_file is None:
            config_file = find_config_file()
        if config_file is None:
            config = ExperimentConfig()
            logger.debug("No configuration file found; using defaults")
        else:
            config = load_config_from_path(config_file)
            logger.debug("Loaded configuration", path=sanitize_log_input(str(config_file)))

        if seed is not None:
            config.seed = seed
        if out_dir is not None:
            config.output_dir = out_dir
        return config

    @staticmethod
    def check_command(config: ExperimentConfig, command: str) -> None:
        """Raise if the config cannot serve the command.

        Raises:
            ConfigurationError: Listing every problem found
        """
        errors = validate_checkpoint_refs(config, command)
        if errors:
            raise ConfigurationError(f"Configuration is not valid for {command}", errors=errors)

    @staticmethod
    def configure_logging(config: ExperimentConfig, settings: RuntimeSettings) -> None:
        configure_logging(settings.log_level or config.logging.log_level, config.logging.log_format)

    @staticmethod
    def create_pipeline_runner(config: ExperimentConfig, settings: RuntimeSettings) -> PipelineRunner:
        return PipelineRunner(config, config.output_dir, settings)
