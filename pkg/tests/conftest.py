"""Shared fixtures: synthetic audio, tiny model shapes and small on-disk datasets."""

import csv
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
import pytest
from typer.testing import CliRunner

from coughkit.audio.dsp import Spectrogram, SpectrogramKind
from coughkit.audio.io import AudioClip, write_wav
from coughkit.config.base_models import LogLevel
from coughkit.config.loader import load_config_from_dict
from coughkit.config.models import ExperimentConfig
from coughkit.config.network_models import VitConfig
from coughkit.config.settings import RuntimeSettings
from coughkit.core.features import Example
from coughkit.utils.logging import configure_logging


@pytest.fixture(autouse=True)
def quiet_logging():
    """Keep structlog output down to warnings while tests run."""
    configure_logging(LogLevel.WARNING)
    yield


@pytest.fixture
def cli_runner():
    """Create CLI runner instance."""
    return CliRunner()


@pytest.fixture
def make_tone() -> Callable[..., AudioClip]:
    """Factory for pure sine clips."""

    def make(freq_hz: float, duration_s: float = 1.0, amplitude: float = 0.5, sample_rate_hz: int = 16000) -> AudioClip:
        t = np.arange(int(round(duration_s * sample_rate_hz))) / sample_rate_hz
        return AudioClip(samples=amplitude * np.sin(2 * np.pi * freq_hz * t), sample_rate_hz=sample_rate_hz)

    return make


@pytest.fixture
def make_burst_clip() -> Callable[..., AudioClip]:
    """Factory for a -60 dB noise floor with loud noise bursts at given times."""

    def make(
        burst_starts_s: Sequence[float],
        duration_s: float = 4.0,
        burst_s: float = 0.2,
        floor: float = 1e-3,
        burst_amplitude: float = 0.3,
        tone_hz: Optional[float] = None,
        seed: int = 0,
        sample_rate_hz: int = 16000,
    ) -> AudioClip:
        rng = np.random.default_rng(seed)
        n = int(round(duration_s * sample_rate_hz))
        samples = floor * rng.standard_normal(n)
        t = np.arange(n) / sample_rate_hz
        for start_s in burst_starts_s:
            lo = int(round(start_s * sample_rate_hz))
            hi = min(n, lo + int(round(burst_s * sample_rate_hz)))
            samples[lo:hi] += burst_amplitude * rng.standard_normal(hi - lo)
            if tone_hz is not None:
                samples[lo:hi] += 0.4 * np.sin(2 * np.pi * tone_hz * t[lo:hi])
        return AudioClip(samples=np.clip(samples, -1.0, 1.0), sample_rate_hz=sample_rate_hz)

    return make


@pytest.fixture
def tiny_vit() -> VitConfig:
    """Two-block model on 1x16x16 inputs with four 8x8 patches."""
    return VitConfig(
        patch_size=8,
        embed_dim=16,
        depth=2,
        n_heads=2,
        in_channels=1,
        height=16,
        width=16,
        n_classes=2,
    )


@pytest.fixture
def tiny_config_dict(tmp_path) -> Dict:
    """Experiment config small enough to run every stage in seconds."""
    return {
        "seed": 7,
        "output_dir": str(tmp_path / "runs"),
        "dsp": {"mel": {"n_mels": 16}},
        "segmenter": {"peak_threshold": 0.5},
        "augment": {"enabled": False},
        "model": {
            "patch_size": 8,
            "embed_dim": 16,
            "depth": 1,
            "n_heads": 2,
            "in_channels": 1,
            "height": 16,
            "width": 16,
            "n_classes": 2,
        },
        "ssl": {"steps": 3, "batch_size": 4, "learning_rate": 1e-3},
        "train": {"learning_rate": 1e-2, "batch_size": 4, "epochs": 3},
        "eval": {"seeds": [1, 2]},
        "logging": {"log_level": "WARNING"},
    }


@pytest.fixture
def tiny_config(tiny_config_dict) -> ExperimentConfig:
    """Validated tiny experiment config."""
    return load_config_from_dict(tiny_config_dict)


@pytest.fixture
def runtime_settings() -> RuntimeSettings:
    """Runtime settings with a small thread pool."""
    return RuntimeSettings(threads=2)


@pytest.fixture
def make_spectrogram_examples() -> Callable[..., List[Example]]:
    """Factory for log-mel examples whose positives carry a +3 sigma band in mel bins 4-7."""

    def make(n_neg: int, n_pos: int, seed: int = 0, prefix: str = "s") -> List[Example]:
        rng = np.random.default_rng(seed)
        examples = []
        for i, label in enumerate([0] * n_neg + [1] * n_pos):
            values = rng.standard_normal((16, 16))
            if label == 1:
                values[:, 4:8] += 3.0
            spec = Spectrogram(
                values=values,
                frame_rate_hz=62.5,
                bin_axis=np.arange(16, dtype=np.float64),
                kind=SpectrogramKind.LOG_MEL,
            )
            examples.append(Example(source=spec, label=label, subject_id=f"{prefix}{i}", path=f"{prefix}{i}.spec"))
        return examples

    return make


@pytest.fixture
def write_dataset(make_burst_clip) -> Callable[..., Path]:
    """Factory writing burst WAV clips plus a manifest; positives carry a 2 kHz tone in their bursts."""

    def write(
        root: Path,
        n_train_per_class: int = 4,
        n_test_per_class: int = 2,
        duration_s: float = 2.0,
        scores: Optional[Callable[[int], float]] = None,
    ) -> Path:
        root.mkdir(parents=True, exist_ok=True)
        audio_dir = root / "audio"
        rows = []
        index = 0
        for split, per_class in (("train", n_train_per_class), ("test", n_test_per_class)):
            for label in (0, 1):
                for _ in range(per_class):
                    clip = make_burst_clip(
                        [0.5],
                        duration_s=duration_s,
                        burst_s=0.3,
                        tone_hz=2000.0 if label else None,
                        seed=100 + index,
                    )
                    path = write_wav(audio_dir / f"clip{index:03d}.wav", clip)
                    row = [path.relative_to(root).as_posix(), str(label), f"subj{index:03d}", split]
                    if scores is not None:
                        row.append(repr(scores(index)))
                    rows.append(row)
                    index += 1

        manifest = root / "manifest.csv"
        with manifest.open("w", encoding="utf-8", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(["path", "label", "subject_id", "split"] + (["score"] if scores is not None else []))
            writer.writerows(rows)
        return manifest

    return write
