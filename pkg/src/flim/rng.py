"""Deterministic 64-bit PRNG for reproducible fault masks and sampling.

SplitMix64 (Steele, Lea & Flood; public reference implementation): the state
advances by the golden-gamma constant and the output is a bijective mix of the
new state, so the stream is a pure function of (seed, draw index) and is
reproducible across platforms and languages. Bounded draws use modulo
rejection; subset selection is a partial Fisher-Yates shuffle. Changing any of
these algorithms changes every generated mask, so they are pinned here.
"""

from __future__ import annotations

_MASK64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB


class SplitMix64:
    def __init__(self, seed: int):
        self._state = seed & _MASK64

    def next_u64(self) -> int:
        self._state = (self._state + _GAMMA) & _MASK64
        z = self._state
        z = ((z ^ (z >> 30)) * _MIX1) & _MASK64
        z = ((z ^ (z >> 27)) * _MIX2) & _MASK64
        return z ^ (z >> 31)

    def below(self, n: int) -> int:
        """Uniform integer in [0, n) via rejection (no modulo bias)."""
        if n <= 0:
            raise ValueError("bound must be positive")
        threshold = (1 << 64) % n
        while True:
            x = self.next_u64()
            if x >= threshold:
                return x % n

    def unit(self) -> float:
        """Uniform float in [0, 1) with 53 bits of precision."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))


def sample_without_replacement(n: int, k: int, rng: SplitMix64) -> list[int]:
    """First k entries of a Fisher-Yates shuffle of range(n)."""
    if not 0 <= k <= n:
        raise ValueError(f"cannot sample {k} of {n}")
    idx = list(range(n))
    for i in range(k):
        j = i + rng.below(n - i)
        idx[i], idx[j] = idx[j], idx[i]
    return idx[:k]


def fnv1a64(name: str) -> int:
    """FNV-1a 64-bit hash of a UTF-8 string; stable layer-name hashing."""
    h = 0xCBF29CE484222325
    for byte in name.encode("utf-8"):
        h = ((h ^ byte) * 0x100000001B3) & _MASK64
    return h


def round_half_away(x: float) -> int:
    """round() with half-away-from-zero ties, pinned against platform drift."""
    if x >= 0:
        return int(x + 0.5)
    return -int(-x + 0.5)
