"""Configuration loader with JSON/YAML parsing and environment variable substitution."""

import json
import os
import re
from pathlib import Path
from typing import Any, Dict, List, Optional, Set

import yaml
from pydantic import ValidationError

from coughkit.config.models import ExperimentConfig
from coughkit.exceptions import CoughKitError
from coughkit.utils.sanitize import sanitize_log_input


class ConfigurationError(CoughKitError):
    """Raised when configuration loading or validation fails."""


class SecurityError(ConfigurationError):
    """Raised when a configuration references a variable outside the allowlist."""
    pass


class EnvironmentVariableError(ConfigurationError):
    """Raised when environment variable substitution fails."""
    pass


# Variables a config file may reference besides the COUGHKIT_* family
ALLOWED_ENV_VARS: Set[str] = {
    "HOME",
    "USER",
    "PWD",
    "TMPDIR",
    "TMP",
    "TEMP",
    "DATA_DIR",
}

ALLOWED_ENV_PATTERNS = [
    r"^COUGHKIT_[A-Z0-9_]+$",
]

CONFIG_FILENAMES = [
    "coughkit.json",
    "coughkit.yaml",
    "coughkit.yml",
]


def _validate_env_var_name(var_name: str) -> None:
    """Check an environment variable reference against the allowlist.

    Raises:
        SecurityError: If the variable is not allowed
    """
    if var_name in ALLOWED_ENV_VARS:
        return
    if any(re.match(pattern, var_name) for pattern in ALLOWED_ENV_PATTERNS):
        return
    raise SecurityError(
        f"Unauthorized environment variable '{sanitize_log_input(var_name)}' is not in allowlist",
        allowed=sorted(ALLOWED_ENV_VARS),
        patterns=ALLOWED_ENV_PATTERNS,
    )


class ConfigLoader:
    """Configuration loader with environment variable substitution."""

    # ${VAR_NAME} or ${VAR_NAME:default_value}
    ENV_VAR_PATTERN = re.compile(r"\$\{([A-Za-z_][A-Za-z0-9_]*?)(?::([^}]*))?\}")

    def __init__(self, require_env_vars: bool = True) -> None:
        """Initialize the configuration loader.

        Args:
            require_env_vars: Whether every referenced variable without a default must exist
        """
        self.require_env_vars = require_env_vars

    def load_config(self, config_path: Path) -> ExperimentConfig:
        """Load and validate configuration from a JSON or YAML file.

        Args:
            config_path: Path to the configuration file

        Returns:
            Validated ExperimentConfig instance

        Raises:
            ConfigurationError: If loading or validation fails
        """
        if not config_path.exists():
            raise ConfigurationError("Configuration file not found", path=str(config_path))

        try:
            raw_content = config_path.read_text(encoding="utf-8")
            substituted = self._substitute_env_vars(raw_content)

            if config_path.suffix.lower() in (".yaml", ".yml"):
                config_data = yaml.safe_load(substituted)
            else:
                config_data = json.loads(substituted)

            if config_data is None:
                config_data = {}
            if not isinstance(config_data, dict):
                raise ConfigurationError("Configuration file must contain an object")

            return ExperimentConfig.model_validate(config_data)

        except ConfigurationError:
            raise
        except (json.JSONDecodeError, yaml.YAMLError) as e:
            raise ConfigurationError(f"Invalid configuration syntax: {e}", path=str(config_path)) from e
        except ValidationError as e:
            raise ConfigurationError(f"Configuration validation failed: {e}", path=str(config_path)) from e
        except Exception as e:
            raise ConfigurationError(f"Failed to load configuration: {e}", path=str(config_path)) from e

    def _substitute_env_vars(self, content: str) -> str:
        """Substitute ${VAR} and ${VAR:default} references.

        Raises:
            SecurityError: If a reference is outside the allowlist
            EnvironmentVariableError: If a required variable is missing
        """
        missing_vars: List[str] = []

        def replace_env_var(match: re.Match[str]) -> str:
            var_name = match.group(1)
            default_value = match.group(2)
            _validate_env_var_name(var_name)

            env_value = os.getenv(var_name)
            if env_value is not None:
                return env_value.strip()
            if default_value is not None:
                return default_value.strip()
            if self.require_env_vars:
                missing_vars.append(var_name)
            return match.group(0)

        result = self.ENV_VAR_PATTERN.sub(replace_env_var, content)

        if missing_vars:
            raise EnvironmentVariableError(
                "Required environment variables are not set",
                variables=sorted(set(missing_vars)),
            )
        return result

    def validate_config_file(self, config_path: Path) -> tuple[bool, Optional[str]]:
        """Validate a configuration file without raising.

        Returns:
            Tuple of (is_valid, error_message)
        """
        try:
            self.load_config(config_path)
            return True, None
        except ConfigurationError as e:
            return False, str(e)


def load_config_from_path(config_path: Path, require_env_vars: bool = True) -> ExperimentConfig:
    """Convenience function to load configuration from a path."""
    return ConfigLoader(require_env_vars=require_env_vars).load_config(config_path)


def load_config_from_dict(config_data: Dict[str, Any]) -> ExperimentConfig:
    """Load configuration from a dictionary (used by tests and programmatic callers).

    Raises:
        ConfigurationError: If validation fails
    """
    try:
        return ExperimentConfig.model_validate(config_data)
    except ValidationError as e:
        raise ConfigurationError(f"Configuration validation failed: {e}") from e


def find_config_file(start_path: Optional[Path] = None) -> Optional[Path]:
    """Find a configuration file by searching up the directory tree.

    Args:
        start_path: Directory to start from (defaults to the current directory)

    Returns:
        Path to the first coughkit.json / coughkit.yaml / coughkit.yml found, else None
    """
    current_path = (start_path or Path.cwd()).resolve()

    while True:
        for filename in CONFIG_FILENAMES:
            config_path = current_path / filename
            if config_path.exists():
                return config_path

        parent = current_path.parent
        if parent == current_path:
            break
        current_path = parent

    return None


def validate_checkpoint_refs(config: ExperimentConfig, command: str) -> list[str]:
    """Check that checkpoints the given command reads actually exist.

    Args:
        config: Configuration to validate
        command: Pipeline command about to run

    Returns:
        List of validation error messages
    """
    errors = []
    if command in ("finetune", "evaluate", "sam-ablation") and config.train.init_checkpoint is not None:
        if not config.train.init_checkpoint.exists():
            errors.append(f"train.init_checkpoint does not exist: {config.train.init_checkpoint}")
    if command == "predict" and config.eval.checkpoint is None:
        errors.append("eval.checkpoint is required for predict")
    if command in ("evaluate", "predict") and config.eval.checkpoint is not None:
        if not config.eval.checkpoint.exists():
            errors.append(f"eval.checkpoint does not exist: {config.eval.checkpoint}")
    if command == "segment" and not config.segmenter.threshold_is_explicit:
        errors.append("segmenter.peak_threshold must be set explicitly for segment")
    return errors
