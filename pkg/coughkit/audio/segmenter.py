"""Rule-based cough onset detection and fixed-duration segment extraction."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np
import structlog
from scipy import signal

from coughkit.audio.dsp import band_energy, butterworth_lowpass, stft_magnitude
from coughkit.audio.io import AudioClip
from coughkit.config.base_models import LogBase
from coughkit.config.dsp_models import StftParams
from coughkit.config.segmenter_models import OnsetConfig
from coughkit.exceptions import InvalidParameterError, SignalTooShortError

logger = structlog.get_logger(__name__)

ENERGY_FLOOR = 1e-12


@dataclass(frozen=True)
class CoughSegment:
    """Fixed-duration excerpt starting at a detected onset."""

    clip: AudioClip
    onset_frame: int
    onset_time_s: float
    source_id: str


def _energy_and_rate(clip: AudioClip, cfg: OnsetConfig) -> Tuple[np.ndarray, np.ndarray]:
    """Band energy per frame and the smoothed log energy ratio between frames."""
    spec = stft_magnitude(clip, cfg.stft)
    if spec.n_frames < 2:
        raise SignalTooShortError(
            "Energy change rate needs at least two frames",
            n_frames=spec.n_frames,
            source_id=clip.source_id,
        )
    energy = band_energy(spec, cfg.band_lo_hz, cfg.band_hi_hz)

    # numerator floored too: silent frames give log(1) = 0, not log(0)
    ratio = np.maximum(energy[1:], ENERGY_FLOOR) / np.maximum(energy[:-1], ENERGY_FLOOR)
    rate = np.log10(ratio) if cfg.ratio_log_base == LogBase.BASE10 else np.log(ratio)

    if cfg.smooth.enabled:
        cutoff_norm = cfg.smooth.cutoff_hz / (spec.frame_rate_hz / 2.0)
        if not 0 < cutoff_norm < 1:
            raise InvalidParameterError(
                "Smoothing cutoff must lie below the frame-rate Nyquist",
                cutoff_hz=cfg.smooth.cutoff_hz,
                frame_rate_hz=spec.frame_rate_hz,
            )
        rate = butterworth_lowpass(rate, cfg.smooth.order, cutoff_norm)
    return energy, rate


def energy_change_rate(clip: AudioClip, cfg: OnsetConfig) -> np.ndarray:
    """Smoothed log ratio of each frame's band energy to the previous frame's.

    Element t - 1 compares frame t with frame t - 1, so the result has
    n_frames - 1 entries.

    Raises:
        SignalTooShortError: If the clip spans fewer than two frames
    """
    _, rate = _energy_and_rate(clip, cfg)
    return rate


def _local_maxima(x: np.ndarray) -> np.ndarray:
    """Indices strictly above both neighbours; a plateau reports its leftmost index."""
    _, props = signal.find_peaks(x, plateau_size=1)
    return np.asarray(props["left_edges"], dtype=np.int64)


def detect_onsets(clip: AudioClip, cfg: OnsetConfig) -> List[int]:
    """Cough onset frames, ascending.

    Every local maximum of the change rate above the threshold triggers a search
    for the band-energy peak within a window centred on it; the onset is placed
    onset_backoff_frames before that peak. Onsets closer than the minimum gap to
    the previous accepted onset are dropped.
    """
    energy, rate = _energy_and_rate(clip, cfg)
    half = cfg.energy_window_frames // 2
    last_frame = energy.shape[0] - 1

    candidates = set()
    for peak in _local_maxima(rate):
        if rate[peak] <= cfg.peak_threshold:
            continue
        centre = int(peak) + 1
        lo, hi = max(0, centre - half), min(last_frame, centre + half)
        energy_peak = lo + int(np.argmax(energy[lo : hi + 1]))
        candidates.add(max(0, energy_peak - cfg.onset_backoff_frames))

    onsets: List[int] = []
    for onset in sorted(candidates):
        if onsets and onset - onsets[-1] < cfg.onset_gap_frames:
            continue
        onsets.append(onset)

    logger.debug("Detected onsets", source_id=clip.source_id, n_onsets=len(onsets))
    return onsets


def extract_segments(
    clip: AudioClip,
    onsets: Sequence[int],
    duration_s: float,
    stft: StftParams | None = None,
) -> List[CoughSegment]:
    """Cut a fixed-duration segment starting at each onset.

    Segments running past the clip end are zero-padded; segments may overlap.
    Onsets at or beyond the clip end are skipped and counted in a warning.
    """
    if duration_s <= 0:
        raise InvalidParameterError("duration_s must be > 0", duration_s=duration_s)
    stft = stft or StftParams()
    sr = clip.sample_rate_hz
    hop = stft.hop_samples(sr)
    n_out = int(round(duration_s * sr))

    segments: List[CoughSegment] = []
    skipped = 0
    for frame in onsets:
        start = int(frame) * hop
        if frame < 0 or start >= clip.n_samples:
            skipped += 1
            continue
        excerpt = clip.samples[start : start + n_out]
        if excerpt.shape[0] < n_out:
            excerpt = np.pad(excerpt, (0, n_out - excerpt.shape[0]))
        segment_id = f"{clip.source_id}#onset{int(frame)}"
        segments.append(
            CoughSegment(
                clip=AudioClip(samples=excerpt, sample_rate_hz=sr, source_id=segment_id),
                onset_frame=int(frame),
                onset_time_s=int(frame) * hop / sr,
                source_id=clip.source_id,
            )
        )

    if skipped:
        logger.warning(
            "Skipped onsets beyond clip end",
            source_id=clip.source_id,
            skipped=skipped,
            n_samples=clip.n_samples,
        )
    return segments


def segment_clip(clip: AudioClip, cfg: OnsetConfig) -> List[CoughSegment]:
    """Detect onsets and extract their segments."""
    onsets = detect_onsets(clip, cfg)
    return extract_segments(clip, onsets, cfg.segment_duration_s, cfg.stft)
