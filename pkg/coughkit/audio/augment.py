"""Two-stage training augmentation: waveform transforms, SpecAugment and mixup."""

from __future__ import annotations

from typing import Tuple

import librosa
import numpy as np
import structlog

from coughkit.audio.dsp import Spectrogram
from coughkit.audio.io import AudioClip
from coughkit.config.augment_models import MixupConfig, SpecAugConfig, WaveAugConfig
from coughkit.config.base_models import MaskFill
from coughkit.exceptions import InvalidParameterError, ShapeMismatchError

logger = structlog.get_logger(__name__)

Batch = Tuple[np.ndarray, np.ndarray]


def augment_waveform(clip: AudioClip, cfg: WaveAugConfig, rng: np.random.Generator) -> AudioClip:
    """Pitch shift, gain and additive Gaussian noise, each applied with its own probability.

    Pitch shifting preserves duration exactly. The result is clipped to [-1, 1].
    """
    x = clip.samples.copy()

    if rng.random() < cfg.pitch_probability:
        semitones = rng.uniform(*cfg.pitch_semitone_range)
        if semitones != 0:
            x = librosa.effects.pitch_shift(x, sr=clip.sample_rate_hz, n_steps=float(semitones))

    if rng.random() < cfg.gain_probability:
        gain_db = rng.uniform(*cfg.gain_db_range)
        x = x * 10.0 ** (gain_db / 20.0)

    if rng.random() < cfg.noise_probability:
        sigma = rng.uniform(*cfg.noise_sigma_range)
        x = x + rng.normal(0.0, sigma, size=x.shape[0])

    return clip.with_samples(np.clip(x, -1.0, 1.0))


def time_warp(values: np.ndarray, anchor: int, displacement: int) -> np.ndarray:
    """Piecewise-linear warp along the frame axis moving frame `anchor` by `displacement`.

    Frames 0 and n - 1 stay fixed; each output frame is linearly interpolated
    from the two nearest source frames.
    """
    n = values.shape[0]
    target = int(np.clip(anchor + displacement, 1, n - 2))
    t = np.arange(n, dtype=np.float64)
    source = np.where(
        t <= target,
        t * anchor / target,
        anchor + (t - target) * (n - 1 - anchor) / (n - 1 - target),
    )
    left = np.clip(np.floor(source).astype(np.int64), 0, n - 1)
    right = np.minimum(left + 1, n - 1)
    frac = (source - left)[:, None]
    return (1.0 - frac) * values[left] + frac * values[right]


def mask_band(values: np.ndarray, axis: int, start: int, width: int, fill: float) -> np.ndarray:
    """Set `width` consecutive rows (axis 0) or columns (axis 1) from `start` to `fill`."""
    out = values.copy()
    if axis == 0:
        out[start : start + width, :] = fill
    else:
        out[:, start : start + width] = fill
    return out


def _draw_masks(
    values: np.ndarray,
    axis: int,
    n_masks: int,
    max_width: int,
    fill: float,
    rng: np.random.Generator,
) -> np.ndarray:
    size = values.shape[axis]
    for _ in range(n_masks):
        width = int(rng.integers(0, max_width + 1))
        start = int(rng.integers(0, size - width + 1))
        values = mask_band(values, axis, start, width, fill)
    return values


def spec_augment(spec: Spectrogram, cfg: SpecAugConfig, rng: np.random.Generator) -> Spectrogram:
    """One time warp, then frequency masks, then time masks.

    Masks are filled with the pre-mask mean (or zero). The configured masks can
    never cover every frame or every bin.

    Raises:
        InvalidParameterError: If the masks could cover a whole axis
    """
    n_frames, n_bins = spec.values.shape
    max_time = cfg.time_mask_max_frames
    if max_time is None:
        max_time = int(0.1 * n_frames)
    if cfg.n_freq_masks * cfg.freq_mask_max_bins >= n_bins:
        raise InvalidParameterError(
            "Frequency masks could cover every bin",
            n_bins=n_bins,
            n_freq_masks=cfg.n_freq_masks,
            freq_mask_max_bins=cfg.freq_mask_max_bins,
        )
    if cfg.n_time_masks * max_time >= n_frames:
        raise InvalidParameterError(
            "Time masks could cover every frame",
            n_frames=n_frames,
            n_time_masks=cfg.n_time_masks,
            time_mask_max_frames=max_time,
        )

    values = spec.values.copy()
    warp = cfg.time_warp_max_frames
    if warp > 0 and n_frames > 2 * warp + 2:
        anchor = int(rng.integers(warp + 1, n_frames - warp - 1))
        displacement = int(rng.integers(-warp, warp + 1))
        values = time_warp(values, anchor, displacement)

    fill = float(values.mean()) if cfg.mask_fill == MaskFill.MEAN else 0.0
    values = _draw_masks(values, 1, cfg.n_freq_masks, cfg.freq_mask_max_bins, fill, rng)
    values = _draw_masks(values, 0, cfg.n_time_masks, max_time, fill, rng)
    return spec.with_values(values)


def mixup(batch_a: Batch, batch_b: Batch, lam: float) -> Batch:
    """Convex combination of two batches and their probability-vector labels.

    Raises:
        ShapeMismatchError: If inputs or labels differ in shape
        InvalidParameterError: If lam is outside [0, 1] or labels are not distributions
    """
    x_a, y_a = batch_a
    x_b, y_b = batch_b
    if x_a.shape != x_b.shape:
        raise ShapeMismatchError("mixup inputs differ in shape", x_a.shape, x_b.shape)
    if y_a.shape != y_b.shape:
        raise ShapeMismatchError("mixup labels differ in shape", y_a.shape, y_b.shape)
    if not 0.0 <= lam <= 1.0:
        raise InvalidParameterError("mixup lambda must lie in [0, 1]", lam=lam)
    for labels in (y_a, y_b):
        if np.any(labels < 0) or not np.allclose(labels.sum(axis=-1), 1.0, atol=1e-6):
            raise InvalidParameterError("mixup labels must be probability vectors")

    return lam * x_a + (1.0 - lam) * x_b, lam * y_a + (1.0 - lam) * y_b


def sample_mixup_lambda(alpha: float, rng: np.random.Generator) -> float:
    """Draw lambda from Beta(alpha, alpha)."""
    if alpha <= 0:
        raise InvalidParameterError("mixup alpha must be > 0", alpha=alpha)
    return float(rng.beta(alpha, alpha))


def mixup_batch(
    inputs: np.ndarray,
    labels: np.ndarray,
    cfg: MixupConfig,
    rng: np.random.Generator,
) -> Batch:
    """Mix a mini-batch with a random permutation of itself."""
    if not cfg.enabled or inputs.shape[0] < 2:
        return inputs, labels
    lam = sample_mixup_lambda(cfg.alpha, rng)
    order = rng.permutation(inputs.shape[0])
    return mixup((inputs, labels), (inputs[order], labels[order]), lam)
