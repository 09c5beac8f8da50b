"""Manifests, featurization, random streams and pipeline orchestration."""

from coughkit.core.features import Example, Featurizer
from coughkit.core.manifest import DatasetManifest, ManifestRow, Split, parse_manifest, write_manifest
from coughkit.core.pipeline import Command, PipelineResult, PipelineRunner, run_pipeline
from coughkit.core.rng import RngStreams, derive_rng

__all__ = [
    "Command",
    "DatasetManifest",
    "Example",
    "Featurizer",
    "ManifestRow",
    "PipelineResult",
    "PipelineRunner",
    "RngStreams",
    "Split",
    "derive_rng",
    "parse_manifest",
    "run_pipeline",
    "write_manifest",
]
