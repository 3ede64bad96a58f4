"""Seed plumbing shared by every randomized component."""

import zlib

import numpy as np

_MIX = 0x9E3779B1  # golden-ratio multiplier, keeps derived seeds well spread


def as_rng(seed_or_rng) -> np.random.Generator:
    """Accept either an integer seed or an existing Generator."""
    if isinstance(seed_or_rng, np.random.Generator):
        return seed_or_rng
    return np.random.default_rng(int(seed_or_rng))


def derive_seed(base_seed: int, name: str) -> int:
    """Stable per-component seed from a global seed and a component name.

    Every RNG consumer in an experiment derives its own seed this way so
    that changing one component does not shift the random stream of another.
    """
    h = zlib.crc32(name.encode("utf-8"))
    return (int(base_seed) * _MIX + h) % (2**31 - 1)
