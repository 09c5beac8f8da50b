"""Audio ingestion, spectral analysis, segmentation and augmentation."""

from .augment import augment_waveform, mixup, mixup_batch, sample_mixup_lambda, spec_augment
from .dsp import (
    MelFilterbank,
    ModelInput,
    Spectrogram,
    SpectrogramKind,
    band_energy,
    butterworth_lowpass,
    hz_to_mel,
    log_mel,
    mel_filterbank,
    mel_to_hz,
    read_spectrogram,
    stft_magnitude,
    to_model_input,
    write_spectrogram,
)
from .io import AudioClip, decode_wav, encode_wav, load_wav, resample, write_wav
from .segmenter import CoughSegment, detect_onsets, energy_change_rate, extract_segments, segment_clip

__all__ = [
    "AudioClip",
    "decode_wav",
    "encode_wav",
    "load_wav",
    "write_wav",
    "resample",
    "Spectrogram",
    "SpectrogramKind",
    "MelFilterbank",
    "ModelInput",
    "stft_magnitude",
    "band_energy",
    "butterworth_lowpass",
    "hz_to_mel",
    "mel_to_hz",
    "mel_filterbank",
    "log_mel",
    "to_model_input",
    "write_spectrogram",
    "read_spectrogram",
    "CoughSegment",
    "energy_change_rate",
    "detect_onsets",
    "extract_segments",
    "segment_clip",
    "augment_waveform",
    "spec_augment",
    "mixup",
    "mixup_batch",
    "sample_mixup_lambda",
]
