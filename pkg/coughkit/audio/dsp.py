"""Spectral analysis: STFT, band energy, smoothing, mel projection and model inputs."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np
import structlog
from scipy import ndimage, signal

from coughkit.audio.io import AudioClip
from coughkit.config.base_models import NormalizationKind
from coughkit.config.dsp_models import InputNormalizationConfig, MelConfig, StftParams
from coughkit.exceptions import (
    FeatureFileError,
    InvalidParameterError,
    ShapeMismatchError,
    SignalTooShortError,
)

logger = structlog.get_logger(__name__)

LOG_MEL_FLOOR = 1e-6
STD_FLOOR = 1e-8


class SpectrogramKind(str, Enum):
    """What a spectrogram's cells hold."""
    MAGNITUDE = "magnitude"
    LOG_MEL = "log_mel"


@dataclass(frozen=True)
class Spectrogram:
    """Time-frequency array of shape (n_frames, n_bins).

    For magnitude spectrograms bin_axis holds bin centre frequencies in Hz; for
    log-mel spectrograms it holds the mel bin index.
    """

    values: np.ndarray
    frame_rate_hz: float
    bin_axis: np.ndarray
    kind: SpectrogramKind

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise ShapeMismatchError("Spectrogram values must be 2-D", values.shape)
        if len(self.bin_axis) != values.shape[1]:
            raise ShapeMismatchError(
                "bin_axis length must equal the bin count",
                np.shape(self.bin_axis),
                values.shape,
            )
        if not np.all(np.isfinite(values)):
            raise InvalidParameterError("Spectrogram values must be finite")
        if self.kind == SpectrogramKind.MAGNITUDE and np.any(values < 0):
            raise InvalidParameterError("Magnitude spectrogram values must be >= 0")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "bin_axis", np.asarray(self.bin_axis, dtype=np.float64))

    @property
    def n_frames(self) -> int:
        return int(self.values.shape[0])

    @property
    def n_bins(self) -> int:
        return int(self.values.shape[1])

    def with_values(self, values: np.ndarray) -> Spectrogram:
        """Same axes and kind, new values."""
        return Spectrogram(values, self.frame_rate_hz, self.bin_axis, self.kind)


@dataclass(frozen=True)
class MelFilterbank:
    """Triangular HTK-mel filters, weights of shape (n_mels, n_fft_bins)."""

    weights: np.ndarray
    f_min: float
    f_max: float
    sample_rate_hz: int
    fft_size: int

    @property
    def n_mels(self) -> int:
        return int(self.weights.shape[0])

    @property
    def n_fft_bins(self) -> int:
        return int(self.weights.shape[1])


@dataclass(frozen=True)
class ModelInput:
    """Normalized image of shape (channels, height, width)."""

    values: np.ndarray
    normalization: NormalizationKind

    @property
    def channels(self) -> int:
        return int(self.values.shape[0])

    @property
    def height(self) -> int:
        return int(self.values.shape[1])

    @property
    def width(self) -> int:
        return int(self.values.shape[2])


def stft_magnitude(clip: AudioClip, params: StftParams) -> Spectrogram:
    """Magnitude STFT with no centre padding.

    n_frames = floor((n_samples - win) / hop) + 1, n_bins = fft_size / 2 + 1.

    Raises:
        SignalTooShortError: If the clip is shorter than one window
    """
    sr = clip.sample_rate_hz
    hop = params.hop_samples(sr)
    win = params.win_samples(sr)
    n_fft = params.n_fft(sr)
    if n_fft < win:
        raise InvalidParameterError("fft_size must be >= window length", fft_size=n_fft, win_samples=win)
    if clip.n_samples < win:
        raise SignalTooShortError(
            "Clip is shorter than one analysis window",
            n_samples=clip.n_samples,
            win_samples=win,
            source_id=clip.source_id,
        )

    n_frames = (clip.n_samples - win) // hop + 1
    frames = np.lib.stride_tricks.sliding_window_view(clip.samples, win)[::hop][:n_frames]
    window = signal.get_window(params.window, win, fftbins=True)
    magnitude = np.abs(np.fft.rfft(frames * window, n=n_fft, axis=1))

    bin_hz = np.arange(n_fft // 2 + 1) * sr / n_fft
    return Spectrogram(
        values=magnitude,
        frame_rate_hz=sr / hop,
        bin_axis=bin_hz,
        kind=SpectrogramKind.MAGNITUDE,
    )


def band_energy(spec: Spectrogram, lo_hz: float, hi_hz: float) -> np.ndarray:
    """Per-frame sum of magnitude over bins centred in [lo_hz, hi_hz].

    Raises:
        InvalidParameterError: If the band is invalid or holds no bin
    """
    if spec.kind != SpectrogramKind.MAGNITUDE:
        raise InvalidParameterError("band_energy needs a magnitude spectrogram", kind=spec.kind.value)
    nyquist = float(spec.bin_axis[-1])
    if not 0 <= lo_hz < hi_hz or hi_hz > nyquist:
        raise InvalidParameterError(
            "Band must satisfy 0 <= lo < hi <= Nyquist",
            lo_hz=lo_hz,
            hi_hz=hi_hz,
            nyquist_hz=nyquist,
        )
    in_band = (spec.bin_axis >= lo_hz) & (spec.bin_axis <= hi_hz)
    if not in_band.any():
        raise InvalidParameterError("No frequency bin lies in the band", lo_hz=lo_hz, hi_hz=hi_hz)
    return spec.values[:, in_band].sum(axis=1)


def butterworth_lowpass(x: np.ndarray, order: int, cutoff_norm: float) -> np.ndarray:
    """Zero-phase (forward-backward) Butterworth low-pass.

    Args:
        x: Sequence to smooth
        order: Filter order
        cutoff_norm: Cutoff divided by the sequence's Nyquist rate, in (0, 1)
    """
    x = np.asarray(x, dtype=np.float64)
    if order < 1:
        raise InvalidParameterError("Butterworth order must be >= 1", order=order)
    if not 0 < cutoff_norm < 1:
        raise InvalidParameterError("cutoff_norm must lie in (0, 1)", cutoff_norm=cutoff_norm)
    if x.size == 0:
        raise InvalidParameterError("Cannot filter an empty sequence")

    sos = signal.butter(order, cutoff_norm, btype="low", output="sos")
    # sosfiltfilt rejects inputs shorter than its default edge padding
    padlen = min(3 * (2 * len(sos) + 1), x.size - 1)
    return signal.sosfiltfilt(sos, x, padlen=padlen)


def hz_to_mel(hz: np.ndarray | float) -> np.ndarray:
    """HTK mel scale: 2595 * log10(1 + f / 700)."""
    return 2595.0 * np.log10(1.0 + np.asarray(hz, dtype=np.float64) / 700.0)


def mel_to_hz(mel: np.ndarray | float) -> np.ndarray:
    """Inverse of hz_to_mel."""
    return 700.0 * (10.0 ** (np.asarray(mel, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(
    n_mels: int,
    fft_size: int,
    sample_rate_hz: int,
    f_min: float = 0.0,
    f_max: float | None = None,
) -> MelFilterbank:
    """Triangular filters with peaks at equally spaced HTK-mel points.

    A filter narrower than the FFT bin spacing would have no bin under its
    triangle; such filters get unit weight at the bin nearest their peak so no
    row is empty.
    """
    nyquist = sample_rate_hz / 2.0
    if f_max is None:
        f_max = nyquist
    if n_mels < 1:
        raise InvalidParameterError("n_mels must be >= 1", n_mels=n_mels)
    if fft_size < 2:
        raise InvalidParameterError("fft_size must be >= 2", fft_size=fft_size)
    if not 0 <= f_min < f_max <= nyquist:
        raise InvalidParameterError(
            "Filterbank needs 0 <= f_min < f_max <= Nyquist",
            f_min=f_min,
            f_max=f_max,
            nyquist_hz=nyquist,
        )

    bin_hz = np.arange(fft_size // 2 + 1) * sample_rate_hz / fft_size
    edges_hz = mel_to_hz(np.linspace(hz_to_mel(f_min), hz_to_mel(f_max), n_mels + 2))
    lower, centre, upper = edges_hz[:-2, None], edges_hz[1:-1, None], edges_hz[2:, None]

    rising = (bin_hz[None, :] - lower) / (centre - lower)
    falling = (upper - bin_hz[None, :]) / (upper - centre)
    weights = np.maximum(0.0, np.minimum(rising, falling))

    empty = np.flatnonzero(weights.max(axis=1) <= 0)
    if empty.size:
        nearest = np.abs(bin_hz[None, :] - centre[empty]).argmin(axis=1)
        weights[empty, nearest] = 1.0
        logger.debug("Mel filters narrower than one bin", n_filters=int(empty.size), fft_size=fft_size)

    return MelFilterbank(
        weights=weights,
        f_min=float(f_min),
        f_max=float(f_max),
        sample_rate_hz=sample_rate_hz,
        fft_size=fft_size,
    )


def mel_filterbank_for(config: MelConfig, stft: StftParams, sample_rate_hz: int) -> MelFilterbank:
    """Filterbank matching a configured STFT at the given rate."""
    return mel_filterbank(
        n_mels=config.n_mels,
        fft_size=stft.n_fft(sample_rate_hz),
        sample_rate_hz=sample_rate_hz,
        f_min=config.f_min,
        f_max=config.f_max,
    )


def log_mel(spec: Spectrogram, fb: MelFilterbank) -> Spectrogram:
    """ln(fb . magnitude^2 + 1e-6), one row per frame.

    Raises:
        ShapeMismatchError: If the spectrogram bin count differs from the filterbank's
    """
    if spec.kind != SpectrogramKind.MAGNITUDE:
        raise InvalidParameterError("log_mel needs a magnitude spectrogram", kind=spec.kind.value)
    if spec.n_bins != fb.n_fft_bins:
        raise ShapeMismatchError(
            "Spectrogram bins do not match the filterbank",
            spec.values.shape,
            fb.weights.shape,
        )
    mel_power = (spec.values**2) @ fb.weights.T
    return Spectrogram(
        values=np.log(mel_power + LOG_MEL_FLOOR),
        frame_rate_hz=spec.frame_rate_hz,
        bin_axis=np.arange(fb.n_mels, dtype=np.float64),
        kind=SpectrogramKind.LOG_MEL,
    )


def to_model_input(
    spec: Spectrogram,
    channels: int,
    height: int,
    width: int,
    normalization: InputNormalizationConfig | None = None,
) -> ModelInput:
    """Turn a log-mel spectrogram into a (channels, height, width) model image.

    Height runs over mel bins and width over frames. The image is bilinearly
    resized when its size differs from the target, duplicated across channels,
    and normalized last.
    """
    if min(channels, height, width) < 1:
        raise InvalidParameterError(
            "Target dimensions must be >= 1",
            channels=channels,
            height=height,
            width=width,
        )
    if spec.values.size == 0:
        raise InvalidParameterError("Cannot build a model input from an empty spectrogram")
    normalization = normalization or InputNormalizationConfig()

    image = spec.values.T
    if image.shape != (height, width):
        factors = (height / image.shape[0], width / image.shape[1])
        image = ndimage.zoom(image, factors, order=1, mode="nearest")
        if image.shape != (height, width):
            raise ShapeMismatchError("Resize produced an unexpected shape", image.shape, (height, width))

    stacked = np.repeat(image[None, :, :], channels, axis=0)

    if normalization.kind == NormalizationKind.PER_CLIP_STANDARDIZE:
        if np.all(stacked == stacked.flat[0]):
            normalized = np.zeros_like(stacked)
        else:
            sigma = max(float(stacked.std()), STD_FLOOR)
            normalized = (stacked - stacked.mean()) / sigma
    else:
        normalized = (stacked - normalization.mean) / normalization.std

    return ModelInput(values=normalized, normalization=normalization.kind)


def write_spectrogram(path: Path, spec: Spectrogram) -> Path:
    """Write the portable float matrix format.

    Header line `rows cols frame_rate_hz kind`, then row-major little-endian float32.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = f"{spec.n_frames} {spec.n_bins} {spec.frame_rate_hz!r} {spec.kind.value}\n"
    with path.open("wb") as f:
        f.write(header.encode("ascii"))
        f.write(np.ascontiguousarray(spec.values, dtype="<f4").tobytes())
    return path


def read_spectrogram(path: Path) -> Spectrogram:
    """Read a spectrogram written by write_spectrogram.

    The bin axis is not stored: it is restored as the bin index.

    Raises:
        FeatureFileError: If the header or payload is malformed
    """
    raw = Path(path).read_bytes()
    newline = raw.find(b"\n")
    if newline < 0:
        raise FeatureFileError("Spectrogram file has no header line", path=str(path))
    try:
        rows_s, cols_s, rate_s, kind_s = raw[:newline].decode("ascii").split()
        rows, cols, rate = int(rows_s), int(cols_s), float(rate_s)
        kind = SpectrogramKind(kind_s)
    except (UnicodeDecodeError, ValueError) as e:
        raise FeatureFileError(f"Malformed spectrogram header: {e}", path=str(path)) from e

    payload = raw[newline + 1 :]
    if len(payload) != rows * cols * 4:
        raise FeatureFileError(
            "Spectrogram payload size does not match its header",
            path=str(path),
            expected_bytes=rows * cols * 4,
            actual_bytes=len(payload),
        )
    values = np.frombuffer(payload, dtype="<f4").reshape(rows, cols).astype(np.float64)
    return Spectrogram(
        values=values,
        frame_rate_hz=rate,
        bin_axis=np.arange(cols, dtype=np.float64),
        kind=kind,
    )
