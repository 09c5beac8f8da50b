"""Cough onset detection configuration models."""

from pydantic import Field, field_validator, model_validator

from .base_models import LogBase, StrictModel
from .dsp_models import StftParams


class ButterworthParams(StrictModel):
    """Low-pass smoothing of the energy change-rate sequence."""

    enabled: bool = Field(True, description="Whether to smooth at all")
    order: int = Field(2, description="Filter order", ge=1)
    cutoff_hz: float = Field(
        10.0,
        description="Cutoff in Hz of the frame-rate sequence (62.5 Hz at 16 kHz)",
        gt=0,
    )


class OnsetConfig(StrictModel):
    """Cough onset detection and segment extraction configuration."""

    stft: StftParams = Field(default_factory=StftParams, description="STFT framing")
    band_lo_hz: float = Field(120.0, description="Lower edge of the energy band", ge=0)
    band_hi_hz: float = Field(8000.0, description="Upper edge of the energy band", gt=0)
    ratio_log_base: LogBase = Field(
        LogBase.NATURAL,
        description="Logarithm base of the frame energy ratio",
    )
    smooth: ButterworthParams = Field(
        default_factory=ButterworthParams,
        description="Butterworth smoothing of the change-rate sequence",
    )
    peak_threshold: float = Field(
        100.0,
        description="Threshold on the smoothed log energy ratio; set it explicitly",
        allow_inf_nan=False,
    )
    energy_window_frames: int = Field(
        5,
        description="Window, centred on a change-rate peak, searched for the energy peak",
        ge=1,
    )
    onset_backoff_frames: int = Field(
        2,
        description="Onset is placed this many frames before the energy peak",
        ge=0,
    )
    min_onset_gap_frames: int | None = Field(
        None,
        description="Minimum distance between accepted onsets (defaults to energy_window_frames)",
        ge=0,
    )
    segment_duration_s: float = Field(
        1.0,
        description="Duration of each extracted segment in seconds",
        gt=0,
    )

    @field_validator("energy_window_frames")
    @classmethod
    def validate_window_is_odd(cls, value: int) -> int:
        """The window is centred on the peak so it must be odd."""
        if value % 2 == 0:
            raise ValueError("energy_window_frames must be odd")
        return value

    @model_validator(mode="after")
    def validate_band(self) -> "OnsetConfig":
        """Band edges must be ordered."""
        if self.band_lo_hz >= self.band_hi_hz:
            raise ValueError("band_lo_hz must be < band_hi_hz")
        return self

    @property
    def threshold_is_explicit(self) -> bool:
        """Whether peak_threshold was supplied rather than defaulted."""
        return "peak_threshold" in self.model_fields_set

    @property
    def onset_gap_frames(self) -> int:
        """Effective minimum inter-onset gap."""
        if self.min_onset_gap_frames is None:
            return self.energy_window_frames
        return self.min_onset_gap_frames
