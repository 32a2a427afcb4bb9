"""Seedable random streams.

Each stream is a numpy ``Generator`` driven by PCG64 (64-bit state increment,
128-bit LCG with XSL-RR output).  A stream is identified by ``(seed, stream_id)``
and seeded through ``SeedSequence(seed, spawn_key=(stream_id,))``, whose hash
mixes the stream id into the state so sibling streams never overlap.  Gaussian
variates come from numpy's ziggurat sampler.
"""

from __future__ import annotations

import numpy as np


class RngStream:
    """Single-owner random source. Hand each parallel consumer its own :meth:`split`."""

    def __init__(self, seed: int, stream_id: int = 0, _spawn_key: tuple = ()):
        if seed < 0 or seed >= 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        if stream_id < 0:
            raise ValueError("stream_id must be nonnegative")
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        self._spawn_key = tuple(_spawn_key) or (self.stream_id,)
        self._gen = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence(self.seed, spawn_key=self._spawn_key)))
        self._children = 0

    def __repr__(self):
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id}, key={self._spawn_key})"

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def uniform(self, lo, hi, size=None):
        lo_a = np.asarray(lo, dtype=float)
        hi_a = np.asarray(hi, dtype=float)
        if np.any(lo_a > hi_a):
            raise ValueError(f"invalid interval: lo={lo!r} > hi={hi!r}")
        out = self._gen.uniform(lo_a, hi_a, size=size)
        # numpy returns lo + (hi - lo) * U; keep degenerate intervals exact
        out = np.where(lo_a == hi_a, lo_a, out)
        return float(out) if np.ndim(out) == 0 else out

    def normal(self, mu=0.0, sigma=1.0, size=None):
        sigma_a = np.asarray(sigma, dtype=float)
        if np.any(sigma_a < 0):
            raise ValueError(f"invalid standard deviation {sigma!r} < 0")
        out = self._gen.normal(mu, sigma_a, size=size)
        return float(out) if np.ndim(out) == 0 else out

    def standard_normal(self, size):
        return self._gen.standard_normal(size)

    def split(self, n: int = 1) -> list["RngStream"]:
        """Independent child streams; repeated calls keep producing fresh children."""
        kids = []
        for _ in range(n):
            key = self._spawn_key + (self._children,)
            self._children += 1
            kids.append(RngStream(self.seed, self.stream_id, _spawn_key=key))
        return kids


def create(seed: int, stream_id: int = 0) -> RngStream:
    return RngStream(seed, stream_id)
