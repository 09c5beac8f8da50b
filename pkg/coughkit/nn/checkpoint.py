"""Checkpoint container: JSON header followed by raw little-endian float32 tensors.

Layout:
    8 bytes   little-endian uint64 header length N
    N bytes   UTF-8 JSON header {"format", "version", "config", "tensors", "extra"}
    rest      tensor payloads back to back; each directory entry gives
              name, shape and byte offset into this region
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional

import numpy as np
import structlog

from coughkit.config.network_models import VitConfig
from coughkit.exceptions import CheckpointError
from coughkit.nn.vit import VitModel

logger = structlog.get_logger(__name__)

FORMAT_NAME = "coughkit-checkpoint"
FORMAT_VERSION = 1
_LENGTH = struct.Struct("<Q")


@dataclass
class Checkpoint:
    """In-memory checkpoint contents."""

    config: Dict[str, Any]
    tensors: Dict[str, np.ndarray]
    extra: Dict[str, Any] = field(default_factory=dict)

    def subset(self, prefix: str) -> Dict[str, np.ndarray]:
        """Tensors under `prefix.`, with the prefix stripped."""
        cut = len(prefix) + 1
        return {name[cut:]: values for name, values in self.tensors.items() if name.startswith(prefix + ".")}


def save_checkpoint(path: Path, checkpoint: Checkpoint) -> Path:
    """Write a checkpoint; float32 tensors round-trip bitwise."""
    path = Path(path)
    directory = []
    payloads = []
    offset = 0
    for name, values in checkpoint.tensors.items():
        blob = np.ascontiguousarray(values, dtype="<f4").tobytes()
        directory.append({"name": name, "shape": list(np.shape(values)), "offset": offset})
        payloads.append(blob)
        offset += len(blob)

    header = json.dumps(
        {
            "format": FORMAT_NAME,
            "version": FORMAT_VERSION,
            "config": checkpoint.config,
            "tensors": directory,
            "extra": checkpoint.extra,
        },
        sort_keys=True,
    ).encode("utf-8")

    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as f:
        f.write(_LENGTH.pack(len(header)))
        f.write(header)
        for blob in payloads:
            f.write(blob)
    logger.debug("Wrote checkpoint", path=str(path), n_tensors=len(directory), payload_bytes=offset)
    return path


def load_checkpoint(path: Path) -> Checkpoint:
    """Read a checkpoint written by save_checkpoint.

    Raises:
        CheckpointError: If the file is missing, truncated or not a checkpoint
    """
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise CheckpointError(f"Cannot read checkpoint: {e}", path=str(path)) from e
    if len(raw) < _LENGTH.size:
        raise CheckpointError("Checkpoint is truncated", path=str(path))

    (header_len,) = _LENGTH.unpack_from(raw)
    start = _LENGTH.size + header_len
    if start > len(raw):
        raise CheckpointError("Checkpoint header is truncated", path=str(path))
    try:
        header = json.loads(raw[_LENGTH.size : start].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"Checkpoint header is not valid JSON: {e}", path=str(path)) from e
    if header.get("format") != FORMAT_NAME:
        raise CheckpointError("Not a coughkit checkpoint", path=str(path))

    payload = memoryview(raw)[start:]
    tensors: Dict[str, np.ndarray] = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        begin = entry["offset"]
        end = begin + 4 * count
        if end > len(payload):
            raise CheckpointError("Tensor data is truncated", path=str(path), tensor=entry["name"])
        tensors[entry["name"]] = np.frombuffer(payload[begin:end], dtype="<f4").reshape(shape).astype(np.float32)

    return Checkpoint(config=header.get("config", {}), tensors=tensors, extra=header.get("extra", {}))


def model_checkpoint(model: VitModel, prefix: str = "model", extra: Optional[Dict[str, Any]] = None) -> Checkpoint:
    """Checkpoint holding one model under `prefix`."""
    return Checkpoint(
        config={"kind": "model", prefix: model.cfg.model_dump(mode="json")},
        tensors={f"{prefix}.{name}": values for name, values in model.state_dict().items()},
        extra=dict(extra or {}),
    )


def model_from_checkpoint(checkpoint: Checkpoint, prefix: str = "model") -> VitModel:
    """Rebuild the model stored under `prefix`.

    Raises:
        CheckpointError: If the checkpoint has no such model
    """
    if prefix not in checkpoint.config:
        raise CheckpointError(f"Checkpoint holds no '{prefix}' network", available=sorted(checkpoint.config))
    cfg = VitConfig.model_validate(checkpoint.config[prefix])
    return VitModel.from_state_dict(cfg, checkpoint.subset(prefix))


def save_model(path: Path, model: VitModel, extra: Optional[Dict[str, Any]] = None) -> Path:
    return save_checkpoint(path, model_checkpoint(model, extra=extra))


def load_model(path: Path, prefix: str = "model") -> VitModel:
    return model_from_checkpoint(load_checkpoint(path), prefix)
