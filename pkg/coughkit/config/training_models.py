"""Pretraining, fine-tuning and evaluation configuration models."""

from pathlib import Path
from typing import List, Literal

from pydantic import Field, field_validator

from .base_models import (
    AggregationMode,
    InitSource,
    MaskStrategy,
    OptimizerKind,
    StrictModel,
)


class SslConfig(StrictModel):
    """Teacher-student self-supervised pretraining configuration."""

    mask_ratio: float = Field(0.75, description="Fraction of patches hidden from the student", gt=0, lt=1)
    mask_strategy: MaskStrategy = Field(MaskStrategy.RANDOM, description="Random or block-wise masking")
    ema_tau: float = Field(0.999, description="EMA decay of the teacher", gt=0, le=1)
    ema_tau_end: float | None = Field(
        None,
        description="If set, tau is annealed linearly to this value over ema_anneal_steps",
        gt=0,
        le=1,
    )
    ema_anneal_steps: int = Field(0, description="Steps over which tau is annealed", ge=0)
    w_global: float = Field(1.0, description="Weight of the global (class token) loss", ge=0)
    w_local: float = Field(1.0, description="Weight of the local (masked patch) loss", ge=0)
    decoder_depth: int = Field(1, description="Transformer blocks in the decoder", ge=1)
    layer_norm_targets: bool = Field(True, description="Layer-normalize teacher targets")
    steps: int = Field(100, description="Number of pretraining steps", ge=1)
    batch_size: int = Field(8, description="Spectrograms per step", ge=1)
    learning_rate: float = Field(1e-4, description="Adam learning rate for student and decoder", ge=0)
    checkpoint_every: int = Field(0, description="Checkpoint period in steps (0 = only at the end)", ge=0)

    def tau_at(self, step: int) -> float:
        """EMA decay used after the given (0-based) step."""
        if self.ema_tau_end is None or self.ema_anneal_steps == 0:
            return self.ema_tau
        frac = min(1.0, step / self.ema_anneal_steps)
        return self.ema_tau + frac * (self.ema_tau_end - self.ema_tau)


class TrainConfig(StrictModel):
    """Supervised fine-tuning configuration."""

    learning_rate: float = Field(2e-6, description="Adam learning rate", gt=0)
    batch_size: int = Field(24, description="Mini-batch size", ge=1)
    epochs: int = Field(10, description="Training epochs", ge=1)
    optimizer: OptimizerKind = Field(OptimizerKind.ADAM, description="adam or adam+sam")
    sam_rho: float = Field(0.05, description="SAM neighbourhood radius", gt=0)
    pos_weight: float | Literal["auto"] = Field(
        "auto",
        description="Loss weight of the positive class; 'auto' = #negative / #positive",
    )
    seed: int | None = Field(None, description="Overrides the experiment seed for this stage")
    init_checkpoint: Path | None = Field(
        None,
        description="Checkpoint to start from (model or pretraining checkpoint)",
    )
    init_from: InitSource = Field(
        InitSource.TEACHER,
        description="Network taken from a pretraining checkpoint",
    )

    @field_validator("pos_weight")
    @classmethod
    def validate_pos_weight(cls, value: float | str) -> float | str:
        """Explicit weights must be positive."""
        if not isinstance(value, str) and value <= 0:
            raise ValueError("pos_weight must be > 0")
        return value


class EvalConfig(StrictModel):
    """Evaluation configuration."""

    aggregation: AggregationMode = Field(
        AggregationMode.SUBJECT_MEAN,
        description="Subject-level (default) or segment-level AUROC",
    )
    seeds: List[int] = Field(default_factory=lambda: [0], description="Seeds for multi-seed runs", min_length=1)
    checkpoint: Path | None = Field(None, description="Model checkpoint to score with")
