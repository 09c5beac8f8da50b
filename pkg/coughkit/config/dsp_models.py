"""Audio decoding and feature extraction configuration models."""

import math

from pydantic import Field, model_validator

from .base_models import NormalizationKind, StrictModel


class AudioConfig(StrictModel):
    """Audio ingestion configuration."""

    target_sample_rate_hz: int = Field(
        16000,
        description="Canonical pipeline sample rate; every clip is resampled to it",
        gt=0,
    )


class StftParams(StrictModel):
    """Short-time Fourier transform framing."""

    hop_s: float = Field(0.016, description="Hop length in seconds", gt=0)
    win_s: float = Field(0.021, description="Window length in seconds", gt=0)
    window: str = Field("hann", description="Analysis window name (scipy.signal.get_window)")
    fft_size: int | None = Field(
        None,
        description="FFT size; defaults to the smallest power of two >= window length",
        ge=1,
    )

    @model_validator(mode="after")
    def validate_window_covers_hop(self) -> "StftParams":
        """A window shorter than the hop would skip samples."""
        if self.win_s < self.hop_s:
            raise ValueError("win_s must be >= hop_s")
        return self

    def hop_samples(self, sample_rate_hz: int) -> int:
        """Hop length in samples at the given rate."""
        return max(1, int(round(self.hop_s * sample_rate_hz)))

    def win_samples(self, sample_rate_hz: int) -> int:
        """Window length in samples at the given rate."""
        return max(1, int(round(self.win_s * sample_rate_hz)))

    def n_fft(self, sample_rate_hz: int) -> int:
        """FFT size in samples at the given rate."""
        if self.fft_size is not None:
            return self.fft_size
        return 1 << math.ceil(math.log2(self.win_samples(sample_rate_hz)))

    def frame_rate_hz(self, sample_rate_hz: int) -> float:
        """Frames per second at the given rate."""
        return sample_rate_hz / self.hop_samples(sample_rate_hz)


class MelConfig(StrictModel):
    """Mel filterbank configuration."""

    n_mels: int = Field(128, description="Number of mel filters", ge=1)
    f_min: float = Field(0.0, description="Lowest filter edge in Hz", ge=0)
    f_max: float | None = Field(
        None,
        description="Highest filter edge in Hz (defaults to Nyquist)",
        gt=0,
    )


class InputNormalizationConfig(StrictModel):
    """Model input normalization."""

    kind: NormalizationKind = Field(
        NormalizationKind.PER_CLIP_STANDARDIZE,
        description="Per-clip standardization or a fixed dataset mean/std",
    )
    mean: float = Field(0.0, description="Mean for fixed_mean_std")
    std: float = Field(1.0, description="Standard deviation for fixed_mean_std", gt=0)


class DspConfig(StrictModel):
    """Spectrogram generation configuration."""

    stft: StftParams = Field(default_factory=StftParams, description="STFT framing")
    mel: MelConfig = Field(default_factory=MelConfig, description="Mel filterbank")
    normalization: InputNormalizationConfig = Field(
        default_factory=InputNormalizationConfig,
        description="Model input normalization",
    )
