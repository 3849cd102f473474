"""Portable counter-based random number generation.

Every random decision in the package flows through the splitmix64 output
function applied to ``seed + GOLDEN * (counter + 1)``, which makes any draw
addressable by (seed, counter) and therefore reproducible across runs,
platforms and reimplementations. Floats use the standard 53-bit mantissa
construction; Gaussians use Box-Muller so no rejection loop desynchronizes
the counter.
"""

from __future__ import annotations

import numpy as np

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB


def mix64(x: int) -> int:
    """splitmix64 finalizer on a 64-bit integer."""
    z = x & _MASK
    z = ((z ^ (z >> 30)) * _MIX1) & _MASK
    z = ((z ^ (z >> 27)) * _MIX2) & _MASK
    return z ^ (z >> 31)


def rand_u64(seed: int, counter: int) -> int:
    return mix64((seed + _GOLDEN * (counter + 1)) & _MASK)


def rand_u64_array(seed: int, counters: np.ndarray) -> np.ndarray:
    """Vectorized rand_u64 over an array of counters."""
    with np.errstate(over="ignore"):
        z = (
            np.uint64(seed & _MASK)
            + np.uint64(_GOLDEN) * (counters.astype(np.uint64) + np.uint64(1))
        )
        z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
        return z ^ (z >> np.uint64(31))


def derive(seed: int, *tags: int) -> int:
    """Deterministic sub-seed from a root seed and integer tags."""
    s = seed & _MASK
    for t in tags:
        s = mix64(((s ^ mix64(t & _MASK)) + _GOLDEN) & _MASK)
    return s


def _to_unit(u: np.ndarray) -> np.ndarray:
    # [0, 1) with 53 significant bits
    return (u >> np.uint64(11)).astype(np.float64) * (2.0**-53)


class Stream:
    """Sequential view over the counter space of one seed."""

    def __init__(self, seed: int, counter: int = 0):
        self.seed = seed & _MASK
        self.counter = counter

    def u64(self) -> int:
        v = rand_u64(self.seed, self.counter)
        self.counter += 1
        return v

    def below(self, n: int) -> int:
        """Uniform integer in [0, n)."""
        if n <= 0:
            raise ValueError("below() needs n >= 1")
        return self.u64() % n

    def uniform(self, lo: float = 0.0, hi: float = 1.0, shape=None) -> np.ndarray | float:
        if shape is None:
            u = (self.u64() >> 11) * (2.0**-53)
            return lo + (hi - lo) * u
        n = int(np.prod(shape))
        counters = np.arange(self.counter, self.counter + n)
        self.counter += n
        u = _to_unit(rand_u64_array(self.seed, counters))
        return (lo + (hi - lo) * u).reshape(shape)

    def normal(self, shape) -> np.ndarray:
        """Standard Gaussians via Box-Muller; two u64 draws per value."""
        n = int(np.prod(shape))
        counters = np.arange(self.counter, self.counter + 2 * n)
        self.counter += 2 * n
        raw = rand_u64_array(self.seed, counters)
        # u1 in (0, 1] so the log is finite
        u1 = (raw[0::2].astype(np.float64) + 1.0) * (2.0**-64)
        u2 = _to_unit(raw[1::2])
        z = np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)
        return z.reshape(shape)
