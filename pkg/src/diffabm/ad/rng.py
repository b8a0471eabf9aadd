"""Counter-based random streams.

Each stream is a Philox generator keyed by ``(seed, stream_id)``. Drawing is
stateless with respect to other streams, so Monte Carlo samples can be produced
in any order and still be reproducible.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK = (1 << 64) - 1
UNIFORM_EPS = 1e-12


class RngStream:
    def __init__(self, seed: int, stream_id: int = 0):
        self.seed = int(seed) & _MASK
        self.stream_id = int(stream_id) & _MASK
        self._bitgen = np.random.Philox(key=np.array([self.seed, self.stream_id], dtype=np.uint64))
        self._gen = np.random.Generator(self._bitgen)

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id})"

    def spawn(self, *path) -> "RngStream":
        """Child stream whose id is a hash of this stream's id and ``path``."""
        text = ":".join([str(self.stream_id)] + [str(p) for p in path]).encode()
        child = int.from_bytes(hashlib.blake2b(text, digest_size=8).digest(), "little")
        return RngStream(self.seed, child)

    def advance(self, n_blocks: int) -> "RngStream":
        """Jump ahead by ``n_blocks`` Philox counter blocks in constant time."""
        self._bitgen.advance(n_blocks)
        return self

    def uniform(self, size=None) -> np.ndarray:
        return self._gen.random(size)

    def normal(self, size=None) -> np.ndarray:
        return self._gen.standard_normal(size)

    def gumbel(self, size=None) -> np.ndarray:
        """Standard Gumbel draws with the uniforms clamped away from 0 and 1."""
        u = np.clip(self._gen.random(size), UNIFORM_EPS, 1.0 - UNIFORM_EPS)
        return -np.log(-np.log(u))

    def integers(self, low, high=None, size=None) -> np.ndarray:
        return self._gen.integers(low, high, size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)
