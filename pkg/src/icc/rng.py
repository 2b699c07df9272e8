"""Portable deterministic random numbers.

SplitMix64 drives every draw in the package so weights, calibration sets and
noise are bit-identical across platforms and numpy versions. Normals come
from Box-Muller pairs; a request for ``n`` normals consumes ``2 * ceil(n / 2)``
uniforms and no spare is carried between calls.
"""

from __future__ import annotations

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_MASK = (1 << 64) - 1


def _mix(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


class Rng:
    """SplitMix64 generator with a 64-bit state.

    Not thread-safe; give each worker its own instance.
    """

    def __init__(self, seed: int):
        self.state = int(seed) & _MASK

    def next_u64(self, n: int) -> np.ndarray:
        """Return the next ``n`` raw 64-bit outputs."""
        steps = np.arange(1, n + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            states = np.uint64(self.state) + steps * _GOLDEN
            out = _mix(states)
        self.state = (self.state + n * int(_GOLDEN)) & _MASK
        return out

    def uniform(self, size=None):
        """Uniform draws in [0, 1) with 53 bits of resolution."""
        n = 1 if size is None else int(np.prod(size))
        u = (self.next_u64(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53
        if size is None:
            return float(u[0])
        return u.reshape(size)

    def normal(self, size=None):
        """Standard normal draws via Box-Muller."""
        n = 1 if size is None else int(np.prod(size))
        pairs = (n + 1) // 2
        u = self.uniform(2 * pairs).reshape(pairs, 2)
        radius = np.sqrt(-2.0 * np.log1p(-u[:, 0]))
        theta = 2.0 * np.pi * u[:, 1]
        z = np.empty((pairs, 2))
        z[:, 0] = radius * np.cos(theta)
        z[:, 1] = radius * np.sin(theta)
        z = z.reshape(-1)[:n]
        if size is None:
            return float(z[0])
        return z.reshape(size)

    def integers(self, low: int, high: int) -> int:
        """Uniform integer in the closed range [low, high]."""
        if high < low:
            raise ValueError(f"empty range [{low}, {high}]")
        span = high - low + 1
        return low + min(int(self.uniform() * span), span - 1)

    def spawn(self, key: int) -> "Rng":
        """Derive an independent child stream from the current state and ``key``."""
        z = _mix(np.array([(self.state ^ (int(key) * 0x2545F4914F6CDD1D)) & _MASK], dtype=np.uint64))
        return Rng(int(z[0]))


def rng_uniform(rng: Rng) -> float:
    return rng.uniform()


def rng_gauss(rng: Rng) -> float:
    return rng.normal()
