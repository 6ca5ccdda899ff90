"""Deterministic random streams for masks, scenes, weights, and noise."""

import numpy as np


class Rng:
    """Seeded random stream; the same seed yields the same values on every platform."""

    def __init__(self, seed):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def uniform(self, shape=(), low=0.0, high=1.0):
        return self._gen.uniform(low, high, size=shape)

    def normal(self, shape=(), mean=0.0, std=1.0):
        return self._gen.normal(mean, std, size=shape)

    def integers(self, low, high, shape=None):
        """Integers in [low, high)."""
        return self._gen.integers(low, high, size=shape)

    def bernoulli(self, p, shape):
        return (self._gen.uniform(0.0, 1.0, size=shape) < p).astype(np.float64)

    def permutation(self, n):
        return self._gen.permutation(n)

    def split(self, key):
        """Independent substream; a pure function of (seed, key)."""
        state = np.random.SeedSequence((self.seed, int(key))).generate_state(1, dtype=np.uint64)
        return Rng(int(state[0]))

    def __repr__(self):
        return f"Rng(seed={self.seed})"
