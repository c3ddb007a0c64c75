"""Seeded random streams.

All randomness flows through ``numpy.random.Generator`` on the PCG64 bit
generator. Sweep points get their own stream keyed by ``(seed, index)`` so the
result of point ``i`` never depends on how many other points ran.
"""

from __future__ import annotations

import numpy as np

ALGORITHM = "PCG64"


def make_rng(seed=None) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))


def stream(seed: int, index: int) -> np.random.Generator:
    """Independent child stream ``index`` of root ``seed``."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(index,))))


def child_seed(rng: np.random.Generator) -> int:
    return int(rng.integers(0, 2**63 - 1))
