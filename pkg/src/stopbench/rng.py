"""Seedable, portable random number generation.

Everything stochastic in a run flows through one SplitMix64 stream so that
frame logs are reproducible bit-for-bit across platforms and Python versions.
The generator algorithm is fixed and documented here rather than delegated to
``random.Random`` so that log replays do not depend on any interpreter detail.
"""

from __future__ import annotations

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def splitmix64(x: int) -> int:
    """One SplitMix64 output step for the 64-bit state ``x``."""
    x = (x + _GOLDEN) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def mix64(base: int, *parts: int) -> int:
    """Derive a child seed from ``base`` and an index tuple.

    Each part is folded in with a SplitMix64 finalizer pass, so distinct
    (base, parts) tuples map to distinct seeds for all practical purposes.
    Used to derive per-combination and per-run seeds from a matrix base seed.
    """
    h = base & _MASK64
    for p in parts:
        h = splitmix64(h ^ ((p & _MASK64) * _GOLDEN & _MASK64))
    return h


class SplitMix64:
    """Minimal counter-based SplitMix64 stream."""

    __slots__ = ("_state",)

    def __init__(self, seed: int):
        self._state = seed & _MASK64

    def next_u64(self) -> int:
        self._state = (self._state + _GOLDEN) & _MASK64
        z = self._state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return z ^ (z >> 31)

    def random(self) -> float:
        """Uniform float in [0, 1) with 53 bits of precision."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def triangular(self, mean: float, spread: float) -> float:
        """Symmetric triangular draw on [mean - spread, mean + spread]."""
        return mean + spread * (self.random() + self.random() - 1.0)
