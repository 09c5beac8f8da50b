"""Clip to model-input featurization shared by every training and scoring stage."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Union

import numpy as np
import structlog

from coughkit.audio.augment import augment_waveform, spec_augment
from coughkit.audio.dsp import (
    Spectrogram,
    SpectrogramKind,
    log_mel,
    mel_filterbank_for,
    read_spectrogram,
    stft_magnitude,
    to_model_input,
)
from coughkit.audio.io import AudioClip, load_wav, resample
from coughkit.config.augment_models import AugmentConfig
from coughkit.config.dsp_models import AudioConfig, DspConfig
from coughkit.config.network_models import VitConfig
from coughkit.config.settings import RuntimeSettings
from coughkit.core.manifest import ManifestRow
from coughkit.exceptions import FeatureFileError
from coughkit.utils.sanitize import sanitize_log_input

logger = structlog.get_logger(__name__)

SPECTROGRAM_SUFFIX = ".spec"
RngFactory = Callable[[int], np.random.Generator]


@dataclass(frozen=True)
class Example:
    """One labeled training item: a waveform, or a precomputed log-mel spectrogram."""

    source: Union[AudioClip, Spectrogram]
    label: int
    subject_id: str
    path: str


class Featurizer:
    """Resample, STFT, log-mel and resize to the model's input shape.

    The mel filterbank is built once and shared read-only across worker threads.
    """

    def __init__(
        self,
        audio: AudioConfig,
        dsp: DspConfig,
        model: VitConfig,
        settings: Optional[RuntimeSettings] = None,
    ) -> None:
        self.audio = audio
        self.dsp = dsp
        self.model = model
        self.filterbank = mel_filterbank_for(dsp.mel, dsp.stft, audio.target_sample_rate_hz)
        self.max_workers = (settings or RuntimeSettings()).max_workers()

    def load_clip(self, path: Path) -> AudioClip:
        return resample(load_wav(path), self.audio.target_sample_rate_hz)

    def log_mel(self, clip: AudioClip) -> Spectrogram:
        if clip.sample_rate_hz != self.audio.target_sample_rate_hz:
            clip = resample(clip, self.audio.target_sample_rate_hz)
        return log_mel(stft_magnitude(clip, self.dsp.stft), self.filterbank)

    def load_spectrogram(self, path: Path) -> Spectrogram:
        """Log-mel of a WAV file, or the contents of a spectrogram file."""
        path = Path(path)
        if path.suffix == SPECTROGRAM_SUFFIX:
            spec = read_spectrogram(path)
            if spec.kind != SpectrogramKind.LOG_MEL:
                raise FeatureFileError("Feature file does not hold a log-mel spectrogram", path=str(path), kind=spec.kind)
            return spec
        return self.log_mel(self.load_clip(path))

    def model_input(self, spec: Spectrogram) -> np.ndarray:
        """(C, H, W) normalized model image."""
        return to_model_input(
            spec,
            self.model.in_channels,
            self.model.height,
            self.model.width,
            self.dsp.normalization,
        ).values

    def example_input(
        self,
        example: Example,
        augment: Optional[AugmentConfig] = None,
        rng: Optional[np.random.Generator] = None,
    ) -> np.ndarray:
        """Model image of one example, with the waveform and spectrogram stages applied when augmenting."""
        augmenting = augment is not None and augment.enabled and rng is not None
        source = example.source
        if isinstance(source, AudioClip):
            if augmenting:
                source = augment_waveform(source, augment.wave, rng)
            spec = self.log_mel(source)
        else:
            spec = source
        if augmenting:
            spec = spec_augment(spec, augment.spec, rng)
        return self.model_input(spec)

    def batch_inputs(
        self,
        examples: Sequence[Example],
        augment: Optional[AugmentConfig] = None,
        rng_for: Optional[RngFactory] = None,
    ) -> np.ndarray:
        """(N, C, H, W) stack; item i draws from rng_for(i) so the result is independent of thread scheduling."""
        if not examples:
            return np.zeros((0, self.model.in_channels, self.model.height, self.model.width))

        def build(i: int) -> np.ndarray:
            rng = rng_for(i) if rng_for is not None else None
            return self.example_input(examples[i], augment, rng)

        with ThreadPoolExecutor(max_workers=self.max_workers) as pool:
            images = list(pool.map(build, range(len(examples))))
        return np.stack(images)

    def load_examples(self, rows: Sequence[ManifestRow], keep_waveforms: bool = True) -> List[Example]:
        """Read every row's file in parallel.

        WAV rows keep their waveform when keep_waveforms is set so the waveform
        augmentation stage can run; otherwise they are reduced to log-mel.
        """

        def load(row: ManifestRow) -> Example:
            source: Union[AudioClip, Spectrogram]
            if row.path.suffix == SPECTROGRAM_SUFFIX or not keep_waveforms:
                source = self.load_spectrogram(row.path)
            else:
                source = self.load_clip(row.path)
            return Example(source=source, label=row.label, subject_id=row.subject_id, path=str(row.path))

        with ThreadPoolExecutor(max_workers=self.max_workers) as pool:
            examples = list(pool.map(load, rows))
        logger.debug("Loaded examples", n_examples=len(examples), first=sanitize_log_input(examples[0].path) if examples else None)
        return examples
