"""Seeded, platform-stable random streams.

Every consumer of randomness gets its own PCG64 stream derived from
``(seed, purpose, *key)`` through :class:`numpy.random.SeedSequence`, so the
draws of one component never depend on how many draws another made.
"""

import zlib

import numpy as np

_BLOCK = 4096


def _purpose_id(purpose):
    return zlib.crc32(purpose.encode("utf-8"))


def make_rng(seed, purpose, *key):
    """Independent generator for ``purpose`` under run ``seed``."""
    ss = np.random.SeedSequence(
        entropy=int(seed), spawn_key=(_purpose_id(purpose), *map(int, key))
    )
    return np.random.Generator(np.random.PCG64(ss))


def derive_seed(seed, purpose, *key):
    """Integer seed for libraries that want a plain int (e.g. sklearn)."""
    return int(make_rng(seed, purpose, *key).integers(0, 2**31 - 1))


class UniformStream:
    """Buffered draws from the open interval (0, 1)."""

    def __init__(self, seed, purpose="tiebreak", *key):
        self._rng = make_rng(seed, purpose, *key)
        self._buf = []
        self._pos = 0

    def _refill(self):
        block = self._rng.random(_BLOCK)
        self._buf = block[block > 0.0].tolist()
        self._pos = 0

    def next(self):
        if self._pos >= len(self._buf):
            self._refill()
        u = self._buf[self._pos]
        self._pos += 1
        return u

    __call__ = next
