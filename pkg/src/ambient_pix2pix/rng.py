"""Keyed counter-based random streams.

Every stream is a Philox generator keyed by ``(seed, stream)``, so any sample
or batch element can be regenerated on its own without replaying others.
"""
from __future__ import annotations

import numpy as np

_MASK = (1 << 64) - 1


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    key = np.array([int(seed) & _MASK, int(stream) & _MASK], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


# stream ids used by the dataset builder
BACKGROUND = 0
SOURCE_NOISE = 1
TARGET_NOISE = 2
