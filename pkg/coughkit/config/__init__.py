"""Configuration package for coughkit."""

from .audit_models import LoggingConfig
from .augment_models import AugmentConfig, MixupConfig, SpecAugConfig, WaveAugConfig
from .base_models import (
    AggregationMode,
    InitSource,
    LogBase,
    LogFormat,
    LogLevel,
    MaskFill,
    MaskStrategy,
    NormalizationKind,
    OptimizerKind,
)
from .dsp_models import (
    AudioConfig,
    DspConfig,
    InputNormalizationConfig,
    MelConfig,
    StftParams,
)
from .loader import (
    ConfigLoader,
    ConfigurationError,
    find_config_file,
    load_config_from_dict,
    load_config_from_path,
    validate_checkpoint_refs,
)
from .models import ExperimentConfig
from .network_models import MODEL_PRESETS, VitConfig, get_preset
from .segmenter_models import ButterworthParams, OnsetConfig
from .settings import RuntimeSettings
from .training_models import EvalConfig, SslConfig, TrainConfig

__all__ = [
    # Core classes
    "ExperimentConfig",
    "ConfigLoader",
    "ConfigurationError",
    "find_config_file",
    "load_config_from_dict",
    "load_config_from_path",
    "validate_checkpoint_refs",
    "RuntimeSettings",

    # Stage configurations
    "AudioConfig",
    "DspConfig",
    "StftParams",
    "MelConfig",
    "InputNormalizationConfig",
    "OnsetConfig",
    "ButterworthParams",
    "AugmentConfig",
    "WaveAugConfig",
    "SpecAugConfig",
    "MixupConfig",
    "VitConfig",
    "MODEL_PRESETS",
    "get_preset",
    "SslConfig",
    "TrainConfig",
    "EvalConfig",
    "LoggingConfig",

    # Enums
    "AggregationMode",
    "InitSource",
    "LogBase",
    "LogFormat",
    "LogLevel",
    "MaskFill",
    "MaskStrategy",
    "NormalizationKind",
    "OptimizerKind",
]
