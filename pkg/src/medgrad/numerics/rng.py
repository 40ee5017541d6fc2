"""Seeded random streams.

Backed by numpy's PCG64 bit generator (128-bit permuted congruential
generator) seeded through ``SeedSequence``. The stream for a given seed and
key path is identical on every platform for a fixed numpy release.
Child streams are derived from ``(seed, *keys)`` rather than drawn from the
parent, so work split across items (e.g. one stream per generated image) is
reproducible regardless of processing order.
"""

from __future__ import annotations

import hashlib

import numpy as np

MASK64 = (1 << 64) - 1


def _key_to_int(key) -> int:
    if isinstance(key, (int, np.integer)):
        return int(key) & MASK64
    return int.from_bytes(hashlib.sha256(str(key).encode("utf-8")).digest()[:8], "little")


class Rng:
    def __init__(self, seed: int, *keys):
        self.seed = int(seed) & MASK64
        self.keys = tuple(keys)
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=tuple(_key_to_int(k) for k in keys))
        self.generator = np.random.Generator(np.random.PCG64(ss))

    def derive(self, *keys) -> "Rng":
        return Rng(self.seed, *self.keys, *keys)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self.generator.normal(loc, scale, size)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self.generator.uniform(low, high, size)

    def integers(self, low, high=None, size=None):
        return self.generator.integers(low, high, size)

    def permutation(self, n):
        return self.generator.permutation(n)

    def random(self, size=None):
        return self.generator.random(size)

    def __repr__(self) -> str:
        return f"Rng(seed={self.seed}, keys={self.keys})"
