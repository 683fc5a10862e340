"""Deterministic 64-bit random number generation.

Every seeded operation in this package (subset sampling, mock trace
generation, model init, epoch shuffles) draws from the SplitMix64 stream
implemented here, so results are reproducible across machines and do not
depend on interpreter-level RNG internals.

The stream is counter-based: output k of a stream seeded with s is
``mix64(s + k * GAMMA)`` (wrapping 64-bit arithmetic), which lets
:meth:`SplitMix64.next_array` produce large batches vectorized while staying
bit-compatible with the scalar path.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB


def mix64(z: int) -> int:
    """Finalizer of SplitMix64: a bijective scramble of a 64-bit word."""
    z &= _MASK64
    z = ((z ^ (z >> 30)) * _MIX1) & _MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & _MASK64
    return z ^ (z >> 31)


def derive_stream_seed(base_seed: int, key: str) -> int:
    """Stable per-key seed: base seed XOR the first 8 bytes of sha256(key).

    Used to give every sample its own RNG stream so per-sample outputs do not
    depend on processing order (checkpoint resume, sharding).
    """
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return (base_seed ^ int.from_bytes(digest[:8], "little")) & _MASK64


class SplitMix64:
    """Seeded SplitMix64 stream with scalar and vectorized draws."""

    def __init__(self, seed: int, counter: int = 0):
        self._seed = seed & _MASK64
        self._count = counter

    def next_u64(self) -> int:
        self._count += 1
        return mix64((self._seed + self._count * _GAMMA) & _MASK64)

    def next_array(self, n: int) -> np.ndarray:
        """Next ``n`` outputs as uint64, identical to ``n`` next_u64 calls."""
        idx = np.arange(self._count + 1, self._count + n + 1, dtype=np.uint64)
        self._count += n
        z = (np.uint64(self._seed) + idx * np.uint64(_GAMMA))  # wraps mod 2^64
        z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
        return z ^ (z >> np.uint64(31))

    def next_float(self) -> float:
        """Uniform double in [0, 1) with 53 random mantissa bits."""
        return (self.next_u64() >> 11) * 2.0**-53

    def next_floats(self, n: int) -> np.ndarray:
        return (self.next_array(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53

    def randrange(self, n: int) -> int:
        """Unbiased integer in [0, n) via rejection sampling."""
        if n <= 0:
            raise ValueError("randrange bound must be positive")
        limit = _MASK64 + 1 - ((_MASK64 + 1) % n)
        while True:
            u = self.next_u64()
            if u < limit:
                return u % n

    def choice(self, xs):
        return xs[self.randrange(len(xs))]

    def shuffle(self, xs: list) -> None:
        """In-place Fisher-Yates shuffle, iterating from the last index down."""
        for i in range(len(xs) - 1, 0, -1):
            j = self.randrange(i + 1)
            xs[i], xs[j] = xs[j], xs[i]
