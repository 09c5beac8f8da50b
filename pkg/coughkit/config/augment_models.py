"""Training-time augmentation configuration models."""

from typing import Tuple

from pydantic import Field, field_validator

from .base_models import MaskFill, StrictModel


def _ordered(value: Tuple[float, float]) -> Tuple[float, float]:
    if value[0] > value[1]:
        raise ValueError(f"range must be ordered, got {value}")
    return value


class WaveAugConfig(StrictModel):
    """Waveform-level augmentation: noise, gain and pitch shift."""

    noise_sigma_range: Tuple[float, float] = Field(
        (0.001, 0.01), description="Gaussian noise standard deviation range (amplitude)"
    )
    noise_probability: float = Field(0.5, description="Probability of adding noise", ge=0, le=1)
    gain_db_range: Tuple[float, float] = Field(
        (-6.0, 6.0), description="Gain range in dB"
    )
    gain_probability: float = Field(0.5, description="Probability of applying gain", ge=0, le=1)
    pitch_semitone_range: Tuple[float, float] = Field(
        (-2.0, 2.0), description="Pitch shift range in semitones"
    )
    pitch_probability: float = Field(0.5, description="Probability of pitch shifting", ge=0, le=1)

    @field_validator("noise_sigma_range", "gain_db_range", "pitch_semitone_range")
    @classmethod
    def validate_ranges(cls, value: Tuple[float, float]) -> Tuple[float, float]:
        """Ranges must be [min, max]."""
        return _ordered(value)

    @field_validator("noise_sigma_range")
    @classmethod
    def validate_noise_non_negative(cls, value: Tuple[float, float]) -> Tuple[float, float]:
        """Noise level cannot be negative."""
        if value[0] < 0:
            raise ValueError("noise sigma must be >= 0")
        return value

    @classmethod
    def disabled(cls) -> "WaveAugConfig":
        """Configuration that leaves waveforms untouched."""
        return cls(noise_probability=0.0, gain_probability=0.0, pitch_probability=0.0)


class SpecAugConfig(StrictModel):
    """Spectrogram-level augmentation: time warp, frequency and time masks."""

    time_warp_max_frames: int = Field(5, description="Maximum warp displacement W", ge=0)
    n_freq_masks: int = Field(2, description="Number of frequency masks", ge=0)
    freq_mask_max_bins: int = Field(8, description="Maximum frequency mask width F", ge=0)
    n_time_masks: int = Field(2, description="Number of time masks", ge=0)
    time_mask_max_frames: int | None = Field(
        None,
        description="Maximum time mask width T (defaults to 10% of the frame count)",
        ge=0,
    )
    mask_fill: MaskFill = Field(MaskFill.MEAN, description="Masked cell value")

    @classmethod
    def disabled(cls) -> "SpecAugConfig":
        """Configuration that leaves spectrograms untouched."""
        return cls(time_warp_max_frames=0, freq_mask_max_bins=0, time_mask_max_frames=0)


class MixupConfig(StrictModel):
    """Mixup of model inputs and soft labels within a mini-batch."""

    enabled: bool = Field(True, description="Whether mixup is applied")
    alpha: float = Field(0.8, description="Beta(alpha, alpha) parameter", gt=0)


class AugmentConfig(StrictModel):
    """Two-stage augmentation configuration (training split only)."""

    enabled: bool = Field(True, description="Master switch for all augmentation")
    wave: WaveAugConfig = Field(default_factory=WaveAugConfig, description="Waveform stage")
    spec: SpecAugConfig = Field(default_factory=SpecAugConfig, description="Spectrogram stage")
    mixup: MixupConfig = Field(default_factory=MixupConfig, description="Mixup")

    @classmethod
    def disabled(cls) -> "AugmentConfig":
        """No augmentation at all."""
        return cls(
            enabled=False,
            wave=WaveAugConfig.disabled(),
            spec=SpecAugConfig.disabled(),
            mixup=MixupConfig(enabled=False),
        )
