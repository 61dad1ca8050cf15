"""Seeded, splittable random streams.

Everything random in the package is driven by a :class:`numpy.random.SeedSequence`
and the counter-based Philox bit generator. Substreams are addressed by
integer keys (scenario label hash, replication index, bootstrap replicate,
...), so results never depend on execution order or worker count.
"""

from __future__ import annotations

import zlib
from typing import Union

import numpy as np

RandomSeed = Union[int, np.random.SeedSequence]


def seed_sequence(seed: RandomSeed) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        return seed
    if isinstance(seed, (bool, np.bool_)) or int(seed) != seed or seed < 0:
        raise ValueError(f"seed must be a non-negative integer, got {seed!r}")
    return np.random.SeedSequence(int(seed))


def substream(seed: RandomSeed, *keys: int) -> np.random.SeedSequence:
    """Child sequence addressed by ``keys`` below ``seed``."""
    ss = seed_sequence(seed)
    return np.random.SeedSequence(ss.entropy, spawn_key=tuple(ss.spawn_key) + tuple(int(k) for k in keys))


def generator(seed: RandomSeed, *keys: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(substream(seed, *keys)))


def label_key(label: str) -> int:
    """Stable 32-bit key for a text label (``hash()`` is salted per process)."""
    return zlib.crc32(label.encode("utf-8"))


def row_normals(seed: RandomSeed, n_rows: int, n_cols: int, *keys: int) -> np.ndarray:
    """Standard normals of shape ``(n_rows, n_cols)`` drawn row by row.

    Row ``i`` only depends on the rows before it, so the draws of family ``i``
    are the same whatever the total number of families.
    """
    return generator(seed, *keys).standard_normal((n_rows, n_cols))
