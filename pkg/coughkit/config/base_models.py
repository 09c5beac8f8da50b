"""Base configuration models and enums."""

from enum import Enum

from pydantic import BaseModel, ConfigDict


class StrictModel(BaseModel):
    """Base for all configuration sections; unknown keys are rejected."""

    model_config = ConfigDict(extra="forbid", validate_assignment=True)


class LogLevel(str, Enum):
    """Logging levels."""
    DEBUG = "DEBUG"
    INFO = "INFO"
    WARNING = "WARNING"
    ERROR = "ERROR"


class LogFormat(str, Enum):
    """Log output formats."""
    JSON = "json"
    TEXT = "text"


class LogBase(str, Enum):
    """Logarithm base for the frame energy ratio."""
    NATURAL = "natural"
    BASE10 = "base10"


class NormalizationKind(str, Enum):
    """How model inputs are normalized."""
    PER_CLIP_STANDARDIZE = "per_clip_standardize"
    FIXED_MEAN_STD = "fixed_mean_std"


class MaskFill(str, Enum):
    """Value written into SpecAugment masks."""
    MEAN = "mean"
    ZERO = "zero"


class MaskStrategy(str, Enum):
    """Patch masking strategy for self-supervised pretraining."""
    RANDOM = "random"
    BLOCK = "block"


class OptimizerKind(str, Enum):
    """Fine-tuning optimizer."""
    ADAM = "adam"
    ADAM_SAM = "adam+sam"


class AggregationMode(str, Enum):
    """Level at which AUROC is computed."""
    SUBJECT_MEAN = "subject_mean"
    SEGMENT_LEVEL = "segment_level"


class InitSource(str, Enum):
    """Which network of a pretraining checkpoint seeds fine-tuning."""
    TEACHER = "teacher"
    STUDENT = "student"
