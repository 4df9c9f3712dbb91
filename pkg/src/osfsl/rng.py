"""Portable seeded random number generation.

Everything stochastic in this package (synthetic pools, episode sampling,
per-episode seed derivation) goes through the SplitMix64 generator below
rather than a platform RNG, so that any two builds given the same seeds
produce byte-identical pools and episodes.

Algorithm: SplitMix64 (Steele, Lea, Flood 2014 `splittable random` mixer).
State advances by the 64-bit golden-ratio constant; each output is the
mixed state. Uniform doubles take the top 53 bits; normals use the
Box-Muller transform on those uniforms.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def mix64(x: int) -> int:
    """SplitMix64 output function: a bijective avalanche mix of a 64-bit word."""
    x &= _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def derive_seed(master_seed: int, index: int) -> int:
    """Derive the seed for stream `index` from a master seed.

    Defined as mix64(master + (index + 1) * GOLDEN) so streams are
    independent of the order in which they are consumed; parallel workers
    can compute their own seeds without coordination.
    """
    return mix64((master_seed + (index + 1) * _GOLDEN) & _MASK64)


class SplitMix64:
    """Seedable deterministic generator with uniform/normal/shuffle helpers."""

    def __init__(self, seed: int):
        self._state = seed & _MASK64
        self._spare_normal: float | None = None

    def next_u64(self) -> int:
        self._state = (self._state + _GOLDEN) & _MASK64
        return mix64(self._state)

    def uniform(self) -> float:
        """Uniform double in [0, 1) from the top 53 bits."""
        return (self.next_u64() >> 11) * (2.0 ** -53)

    def uniform_in(self, lo: float, hi: float) -> float:
        return lo + (hi - lo) * self.uniform()

    def normal(self) -> float:
        """Standard normal via Box-Muller; pairs are generated and cached."""
        if self._spare_normal is not None:
            z = self._spare_normal
            self._spare_normal = None
            return z
        # u1 in (0, 1] keeps the log argument positive.
        u1 = 1.0 - self.uniform()
        u2 = self.uniform()
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * np.pi * u2
        self._spare_normal = float(r * np.sin(theta))
        return float(r * np.cos(theta))

    def normals(self, n: int) -> np.ndarray:
        return np.array([self.normal() for _ in range(n)], dtype=np.float64)

    def randbelow(self, n: int) -> int:
        """Unbiased integer in [0, n) by rejection on the top 53 bits."""
        if n <= 0:
            raise ValueError("randbelow requires n >= 1")
        span = 1 << 53
        limit = span - (span % n)
        while True:
            r = self.next_u64() >> 11
            if r < limit:
                return r % n

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates shuffle."""
        for i in range(len(items) - 1, 0, -1):
            j = self.randbelow(i + 1)
            items[i], items[j] = items[j], items[i]

    def sample_indices(self, n: int, k: int) -> list[int]:
        """k distinct indices from range(n), order given by a partial shuffle."""
        if not 0 <= k <= n:
            raise ValueError(f"cannot sample {k} of {n} items")
        idx = list(range(n))
        for i in range(k):
            j = i + self.randbelow(n - i)
            idx[i], idx[j] = idx[j], idx[i]
        return idx[:k]
