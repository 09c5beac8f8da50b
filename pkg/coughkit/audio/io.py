"""WAV decoding/encoding and band-limited resampling."""

from __future__ import annotations

import io
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import soundfile as sf
import structlog
from scipy import signal

from coughkit.exceptions import AudioDecodeError, InvalidParameterError, UnsupportedFormatError

logger = structlog.get_logger(__name__)

SUPPORTED_CONTAINERS = {"WAV", "WAVEX"}
SUPPORTED_SUBTYPES = {"PCM_16", "FLOAT"}

# Windowed-sinc resampler: Kaiser beta and zero crossings of the sinc kernel
KAISER_BETA = 8.0
ZERO_CROSSINGS = 64


@dataclass(frozen=True)
class AudioClip:
    """Mono waveform with its sample rate."""

    samples: np.ndarray
    sample_rate_hz: int
    source_id: str = "<synthetic>"

    def __post_init__(self) -> None:
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise InvalidParameterError("AudioClip samples must be 1-D", shape=samples.shape)
        if self.sample_rate_hz <= 0:
            raise InvalidParameterError("sample_rate_hz must be > 0", sample_rate_hz=self.sample_rate_hz)
        if not np.all(np.isfinite(samples)):
            raise InvalidParameterError("AudioClip samples must be finite", source_id=self.source_id)
        object.__setattr__(self, "samples", samples)

    @property
    def n_samples(self) -> int:
        """Number of samples."""
        return int(self.samples.shape[0])

    @property
    def duration_s(self) -> float:
        """Duration in seconds."""
        return self.n_samples / self.sample_rate_hz

    def with_samples(self, samples: np.ndarray) -> AudioClip:
        """Same rate and source, new samples."""
        return AudioClip(samples=samples, sample_rate_hz=self.sample_rate_hz, source_id=self.source_id)


def decode_wav(data: bytes, source_id: str = "<bytes>") -> AudioClip:
    """Decode a RIFF/WAVE byte string into a mono clip.

    Accepts 16-bit PCM and 32-bit IEEE float, mono or stereo. Stereo is averaged
    to mono; integer samples are scaled by 1/32768.

    Raises:
        AudioDecodeError: If the container is malformed or empty
        UnsupportedFormatError: If the container or encoding is not supported
    """
    try:
        info = sf.info(io.BytesIO(data))
    except RuntimeError as e:
        raise AudioDecodeError(f"Malformed WAV header: {e}", source_id=source_id) from e

    if info.format not in SUPPORTED_CONTAINERS:
        raise UnsupportedFormatError(
            f"Unsupported container {info.format}",
            encoding=info.format,
            source_id=source_id,
        )
    if info.subtype not in SUPPORTED_SUBTYPES:
        raise UnsupportedFormatError(
            f"Unsupported WAV encoding {info.subtype}",
            encoding=info.subtype,
            source_id=source_id,
        )
    if info.channels not in (1, 2):
        raise UnsupportedFormatError(
            f"Unsupported channel count {info.channels}",
            encoding=f"{info.subtype}x{info.channels}",
            source_id=source_id,
        )

    try:
        frames, sample_rate = sf.read(io.BytesIO(data), dtype="float64", always_2d=True)
    except RuntimeError as e:
        raise AudioDecodeError(f"Failed to read WAV data: {e}", source_id=source_id) from e

    if frames.shape[0] == 0:
        raise AudioDecodeError("WAV file contains no samples", source_id=source_id)
    if not np.all(np.isfinite(frames)):
        raise AudioDecodeError("WAV file contains non-finite samples", source_id=source_id)

    mono = frames.mean(axis=1)
    mono = np.clip(mono, -1.0, 1.0)
    return AudioClip(samples=mono, sample_rate_hz=int(sample_rate), source_id=source_id)


def encode_wav(clip: AudioClip) -> bytes:
    """Encode a clip as 16-bit PCM little-endian mono WAV."""
    quantized = np.clip(np.round(clip.samples * 32768.0), -32768, 32767).astype("<i2")
    buf = io.BytesIO()
    sf.write(buf, quantized, clip.sample_rate_hz, format="WAV", subtype="PCM_16")
    return buf.getvalue()


def load_wav(path: Path) -> AudioClip:
    """Read and decode a WAV file."""
    return decode_wav(Path(path).read_bytes(), source_id=str(path))


def write_wav(path: Path, clip: AudioClip) -> Path:
    """Write a clip as 16-bit PCM mono WAV, creating parent directories."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_wav(clip))
    return path


def _sinc_kernel(up: int, down: int) -> np.ndarray:
    """Kaiser-windowed sinc low-pass for polyphase resampling."""
    max_rate = max(up, down)
    half_len = (ZERO_CROSSINGS // 2) * max_rate
    return signal.firwin(2 * half_len + 1, 1.0 / max_rate, window=("kaiser", KAISER_BETA))


def resample(clip: AudioClip, target_hz: int) -> AudioClip:
    """Band-limited windowed-sinc resampling.

    Output length is round(len * target / source); identity when the rates match.

    Raises:
        InvalidParameterError: If target_hz <= 0
    """
    if target_hz <= 0:
        raise InvalidParameterError("target_hz must be > 0", target_hz=target_hz)
    if target_hz == clip.sample_rate_hz:
        return clip

    g = math.gcd(target_hz, clip.sample_rate_hz)
    up, down = target_hz // g, clip.sample_rate_hz // g
    out_len = int(round(clip.n_samples * target_hz / clip.sample_rate_hz))

    resampled = signal.resample_poly(clip.samples, up, down, window=_sinc_kernel(up, down))
    if resampled.shape[0] >= out_len:
        resampled = resampled[:out_len]
    else:
        resampled = np.pad(resampled, (0, out_len - resampled.shape[0]))

    logger.debug(
        "Resampled clip",
        source_hz=clip.sample_rate_hz,
        target_hz=target_hz,
        n_in=clip.n_samples,
        n_out=out_len,
    )
    return AudioClip(
        samples=np.clip(resampled, -1.0, 1.0),
        sample_rate_hz=target_hz,
        source_id=clip.source_id,
    )
