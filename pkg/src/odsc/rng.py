"""Seedable splitmix64 generator.

splitmix64 is counter based: output ``i`` depends only on ``seed + (i+1)*GAMMA``,
so whole blocks can be produced with vectorised uint64 arithmetic and the
stream stays bit-exact across platforms.
"""
from __future__ import annotations

import math

import numpy as np

GAMMA = 0x9E3779B97F4A7C15
_MASK = (1 << 64) - 1


def _mix(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


class Rng:
    """splitmix64 stream.

    Parameters
    ----------
    seed : int
        Any integer; reduced modulo 2**64.
    """

    def __init__(self, seed: int = 0):
        self.seed = int(seed) & _MASK
        self.state = self.seed

    def next_u64(self) -> int:
        return int(self.u64(1)[0])

    def u64(self, n: int) -> np.ndarray:
        """Next ``n`` outputs as a uint64 array."""
        steps = np.arange(1, n + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            z = np.uint64(self.state) + steps * np.uint64(GAMMA)
            out = _mix(z)
        self.state = (self.state + n * GAMMA) & _MASK
        return out

    def uniform(self, n: int) -> np.ndarray:
        """``n`` doubles in [0, 1) built from the top 53 bits."""
        return (self.u64(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53

    def normal(self, n: int) -> np.ndarray:
        """Standard normals by Box-Muller (one pair per two uniforms)."""
        m = (n + 1) // 2
        u = self.uniform(2 * m)
        u1 = 1.0 - u[0::2]  # (0, 1], keeps log finite
        u2 = u[1::2]
        r = np.sqrt(-2.0 * np.log(u1))
        z = np.empty(2 * m)
        z[0::2] = r * np.cos(2.0 * math.pi * u2)
        z[1::2] = r * np.sin(2.0 * math.pi * u2)
        return z[:n]

    def below(self, bound: int) -> int:
        """Uniform integer in [0, bound) by modulo reduction."""
        if bound <= 0:
            raise ValueError("bound must be positive")
        return self.next_u64() % bound

    def sample(self, population: int, count: int) -> np.ndarray:
        """``count`` distinct indices from ``range(population)`` by partial Fisher-Yates."""
        if not 0 <= count <= population:
            raise ValueError(f"cannot draw {count} distinct items from {population}")
        idx = np.arange(population)
        draws = self.u64(count)
        for i in range(count):
            j = i + int(draws[i] % np.uint64(population - i))
            idx[i], idx[j] = idx[j], idx[i]
        return idx[:count].copy()

    def spawn(self) -> "Rng":
        """Independent child stream seeded from the next output."""
        return Rng(self.next_u64())
