"""Deterministic, splittable random number streams.

Every stochastic operation in the package takes an explicit
``numpy.random.Generator``; there is no global RNG.  Streams are derived
from a 64-bit seed plus a tuple of string/int keys, so independent
components (sweep cells, batch elements, strategies) can own independent
streams that are reproducible across runs and process counts.
"""

from __future__ import annotations

import zlib

import numpy as np


def _key_to_int(key) -> int:
    if isinstance(key, (int, np.integer)):
        return int(key) & 0xFFFFFFFF
    if isinstance(key, float):
        # stable across runs: hash the IEEE-754 bytes, not the repr
        return zlib.crc32(np.float64(key).tobytes())
    if isinstance(key, str):
        return zlib.crc32(key.encode("utf-8"))
    raise TypeError(f"unsupported rng key type: {type(key).__name__}")


def make_rng(seed: int, *keys) -> np.random.Generator:
    """Create a generator for stream (seed, *keys).

    Distinct key tuples give statistically independent Philox streams.
    """
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF] + [_key_to_int(k) for k in keys]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


def split(rng: np.random.Generator, n: int) -> list[np.random.Generator]:
    """Split off n child generators, consuming the parent deterministically."""
    seeds = rng.integers(0, 2**63 - 1, size=n)
    return [make_rng(int(s)) for s in seeds]
