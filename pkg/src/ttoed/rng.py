"""Counter-based random streams.

All stochastic draws in the package go through Philox generators keyed by
an integer tuple, so every stream is reproducible from the run seed and a
stable key regardless of call order or worker count.
"""

from __future__ import annotations

import numpy as np

_MIX = 0x9E3779B97F4A7C15


def _mix_key(*parts: int) -> int:
    h = 0
    for p in parts:
        h ^= (int(p) + _MIX + ((h << 6) & 0xFFFFFFFFFFFFFFFF) + (h >> 2))
        h &= 0xFFFFFFFFFFFFFFFF
    return h


def stream(seed: int, *key_parts: int) -> np.random.Generator:
    """Deterministic generator for the given (seed, key...) stream."""
    key = _mix_key(seed, *key_parts)
    return np.random.Generator(np.random.Philox(key=key))


def normal(seed: int, *key_parts: int, size) -> np.ndarray:
    """Standard normal draws from the keyed stream."""
    return stream(seed, *key_parts).standard_normal(size)


def uniform(seed: int, *key_parts: int, size) -> np.ndarray:
    """Uniform [0, 1) draws from the keyed stream."""
    return stream(seed, *key_parts).random(size)
