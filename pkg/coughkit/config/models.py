"""Main experiment configuration model for coughkit."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Any

from pydantic import Field, field_validator

from .audit_models import LoggingConfig
from .augment_models import AugmentConfig
from .base_models import StrictModel
from .dsp_models import AudioConfig, DspConfig
from .network_models import VitConfig, get_preset
from .segmenter_models import OnsetConfig
from .training_models import EvalConfig, SslConfig, TrainConfig


class ExperimentConfig(StrictModel):
    """Complete experiment configuration, one section per pipeline stage."""

    seed: int = Field(0, description="Global seed; every random stream derives from it")
    output_dir: Path = Field(Path("./runs"), description="Directory receiving all artifacts")

    audio: AudioConfig = Field(default_factory=AudioConfig, description="Audio ingestion")
    dsp: DspConfig = Field(default_factory=DspConfig, description="Spectrogram generation")
    segmenter: OnsetConfig = Field(default_factory=OnsetConfig, description="Cough segmentation")
    augment: AugmentConfig = Field(default_factory=AugmentConfig, description="Training augmentation")
    model: VitConfig = Field(
        default_factory=lambda: get_preset("vit-tiny-cough"),
        description="Model shape, or the name of a preset",
    )
    ssl: SslConfig = Field(default_factory=SslConfig, description="Self-supervised pretraining")
    train: TrainConfig = Field(default_factory=TrainConfig, description="Supervised fine-tuning")
    eval: EvalConfig = Field(default_factory=EvalConfig, description="Evaluation")
    logging: LoggingConfig = Field(default_factory=LoggingConfig, description="Logging and audit")

    @field_validator("model", mode="before")
    @classmethod
    def resolve_preset(cls, value: Any) -> Any:
        """Allow `"model": "vit-tiny-cough"` as shorthand for a preset."""
        if isinstance(value, str):
            try:
                return get_preset(value)
            except KeyError as e:
                raise ValueError(str(e)) from e
        return value

    def config_hash(self) -> str:
        """Stable hash of the configuration; the output directory is not part of it."""
        canonical = json.dumps(self.model_dump(mode="json", exclude={"output_dir"}), sort_keys=True)
        return hashlib.sha256(canonical.encode()).hexdigest()[:16]

    def stage_seed(self) -> int:
        """Seed used by training stages."""
        return self.train.seed if self.train.seed is not None else self.seed
