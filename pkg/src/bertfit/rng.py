"""Deterministic random number generation.

All stochastic choices in the toolkit (initialization, dropout, masking,
sampling) flow through :class:`Rng`, a thin wrapper around numpy's PCG64
bit generator. PCG64 is a fixed, documented algorithm whose stream depends
only on the seed, so the same seed produces bitwise-identical results on
every platform.
"""

from __future__ import annotations

import numpy as np


class Rng:
    """Seeded PCG64 stream with cheap derived sub-streams."""

    def __init__(self, seed: int):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.gen = np.random.Generator(np.random.PCG64(self.seed))

    def derive(self, index: int) -> "Rng":
        """Independent stream for item `index` (seed XOR index).

        Used for per-document example construction so that parallel order
        cannot change the output.
        """
        return Rng(self.seed ^ (int(index) + 0x9E3779B97F4A7C15))

    # -- convenience passthroughs ------------------------------------------

    def normal(self, shape, std=1.0, dtype=np.float32):
        return self.gen.normal(0.0, std, size=shape).astype(dtype)

    def truncated_normal(self, shape, std=0.02, dtype=np.float32):
        """Normal(0, std) clipped at two standard deviations."""
        x = self.gen.normal(0.0, std, size=shape)
        return np.clip(x, -2.0 * std, 2.0 * std).astype(dtype)

    def uniform(self, shape=None):
        return self.gen.random(size=shape)

    def randint(self, low, high=None):
        return int(self.gen.integers(low, high))

    def shuffle(self, seq):
        """In-place Fisher-Yates shuffle of a list."""
        for i in range(len(seq) - 1, 0, -1):
            j = int(self.gen.integers(0, i + 1))
            seq[i], seq[j] = seq[j], seq[i]

    def choice(self, seq):
        return seq[int(self.gen.integers(0, len(seq)))]
