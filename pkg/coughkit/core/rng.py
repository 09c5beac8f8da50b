"""Named random sub-streams derived from one experiment seed."""

import hashlib

import numpy as np

_SEED_MASK = (1 << 64) - 1


def _stream_key(name: str) -> int:
    return int.from_bytes(hashlib.sha256(name.encode("utf-8")).digest()[:8], "little")


def derive_rng(seed: int, stream: str, *indices: int) -> np.random.Generator:
    """Generator keyed on (seed, stream name, indices).

    The same key always yields the same sequence, independent of the order in
    which streams are created, so per-sample streams can be built in parallel.
    """
    spawn_key = (_stream_key(stream),) + tuple(int(i) & _SEED_MASK for i in indices)
    return np.random.default_rng(np.random.SeedSequence(int(seed) & _SEED_MASK, spawn_key=spawn_key))


class RngStreams:
    """Factory of named sub-streams for one run."""

    def __init__(self, seed: int) -> None:
        self.seed = seed

    def stream(self, name: str, *indices: int) -> np.random.Generator:
        return derive_rng(self.seed, name, *indices)
