"""Deterministic, platform-independent randomness primitives.

All sampling in this package flows through xoshiro256** seeded from 64-bit
values, and 64-bit seeds are derived from SHA-256 (``hash64``). Any
conforming implementation of these two algorithms reproduces the exact
same draws, which is what makes plans, samples, and oracle embeddings
bit-reproducible across machines and languages.

Seed derivation (``hash64``): each part is rendered as text (integers in
decimal), UTF-8 encoded, joined with the 0x1F unit separator, hashed with
SHA-256, and the first 8 digest bytes are read big-endian.
"""

import hashlib
import math

MASK64 = (1 << 64) - 1
_SEP = b"\x1f"


def hash64(*parts) -> int:
    """Collapse parts into a 64-bit unsigned seed (see module docstring)."""
    payload = _SEP.join(str(p).encode("utf-8") for p in parts)
    return int.from_bytes(hashlib.sha256(payload).digest()[:8], "big")


def _splitmix64(state):
    state = (state + 0x9E3779B97F4A7C15) & MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31), state


def _rotl(x, k):
    return ((x << k) | (x >> (64 - k))) & MASK64


class Xoshiro256StarStar:
    """xoshiro256** 1.0; 256-bit state expanded from a seed via splitmix64."""

    def __init__(self, seed: int):
        state = seed & MASK64
        s = []
        for _ in range(4):
            value, state = _splitmix64(state)
            s.append(value)
        self._s = s

    def next_u64(self) -> int:
        s0, s1, s2, s3 = self._s
        result = (_rotl((s1 * 5) & MASK64, 7) * 9) & MASK64
        t = (s1 << 17) & MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        self._s = [s0, s1, s2, s3]
        return result

    def below(self, n: int) -> int:
        """Uniform integer in [0, n), rejection-sampled to avoid modulo bias."""
        if n <= 0:
            raise ValueError("below() needs a positive bound")
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            u = self.next_u64()
            if u < limit:
                return u % n

    def unit01(self) -> float:
        """Uniform float in [0, 1) with 53-bit resolution."""
        return (self.next_u64() >> 11) * 2.0 ** -53

    def normal_pair(self):
        """Two independent standard normals (Box-Muller, fixed draw order)."""
        u1 = 1.0 - self.unit01()  # (0, 1]; keeps log() finite
        u2 = self.unit01()
        r = math.sqrt(-2.0 * math.log(u1))
        theta = 2.0 * math.pi * u2
        return r * math.cos(theta), r * math.sin(theta)

    def sample_distinct(self, total: int, k: int):
        """First k elements of a uniform permutation of range(total).

        Sparse partial Fisher-Yates: memory is O(k) regardless of ``total``,
        so huge combinatorial index spaces can be sampled without
        materializing them.
        """
        if k < 0 or k > total:
            raise ValueError(f"cannot draw {k} distinct values from {total}")
        swaps = {}
        out = []
        for i in range(k):
            j = i + self.below(total - i)
            vi = swaps.get(i, i)
            vj = swaps.get(j, j)
            swaps[i], swaps[j] = vj, vi
            out.append(vj)
        return out
