"""Deterministic pseudo-random numbers with a pinned algorithm.

Everything that must reproduce bit-for-bit across runs and platforms
(scene generation, the simulated detector's noise) draws from the
splitmix64 generator implemented here, never from ``random`` or numpy.
The algorithm: the 64-bit state advances by the odd constant
0x9E3779B97F4A7C15 and the output is the finalizer

    z ^= z >> 30; z *= 0xBF58476D1CE4E5B9
    z ^= z >> 27; z *= 0x94D049BB133111EB
    z ^= z >> 31

Reference outputs for seed 0 are frozen in the test suite.
"""

from __future__ import annotations

import math
import struct

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def _finalize(z: int) -> int:
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def mix64(*values: int) -> int:
    """Fold integers into a single 64-bit seed, order-sensitively."""
    acc = 0x243F6A8885A308D3
    for v in values:
        acc = _finalize((acc ^ (v & _MASK64)) + _GOLDEN & _MASK64)
    return acc


def float_bits(x: float) -> int:
    """IEEE-754 bit pattern of a double, for hashing real coordinates."""
    return struct.unpack("<Q", struct.pack("<d", float(x)))[0]


class SplitMix64:
    """Sequential splitmix64 stream."""

    def __init__(self, seed: int):
        self._state = seed & _MASK64

    def next_u64(self) -> int:
        self._state = (self._state + _GOLDEN) & _MASK64
        return _finalize(self._state)

    def next_float(self) -> float:
        """Uniform double in [0, 1)."""
        return (self.next_u64() >> 11) * 2.0**-53

    def uniform(self, lo: float, hi: float) -> float:
        return lo + (hi - lo) * self.next_float()

    def normal(self) -> float:
        """Standard normal via the Box-Muller cosine branch."""
        u1 = self.next_float()
        u2 = self.next_float()
        if u1 <= 0.0:
            u1 = 2.0**-53
        return math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)

    def randrange(self, n: int) -> int:
        # Modulo bias is irrelevant here; determinism is what matters.
        if n <= 0:
            raise ValueError("randrange needs n >= 1")
        return self.next_u64() % n

    def choice(self, seq):
        return seq[self.randrange(len(seq))]
