"""Deterministic RNG derivation.

Every stochastic component takes an explicit seed and derives child streams
through SeedSequence so that runs are reproducible bit for bit. String keys
are folded through crc32, which is stable across processes (unlike hash()).
"""

from __future__ import annotations

import zlib

import numpy as np


def _fold(key) -> int:
    if isinstance(key, str):
        return zlib.crc32(key.encode("utf-8"))
    return int(key) & 0xFFFFFFFF


def rng_for(*keys) -> np.random.Generator:
    """Independent generator for a tuple of ints/strings."""
    entropy = [_fold(k) for k in keys]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


def stable_hash(text: str) -> int:
    return zlib.crc32(text.encode("utf-8"))
