"""Deterministic pseudo-random numbers.

The generator is xoshiro256** seeded through splitmix64. It is implemented on
plain Python integers so the stream is identical on every platform and numpy
version; bulk draws are converted to numpy arrays afterwards.

Substreams are derived from ``(seed, index)`` by mixing the index into the
seed with splitmix64, so a substream never depends on how much of the parent
stream has been consumed.
"""

import math
from typing import Sequence

import numpy as np

MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_TWO_PI = 2.0 * math.pi
_INV_2_53 = 1.0 / (1 << 53)


def splitmix64(state: int) -> tuple[int, int]:
    """Advance a splitmix64 state. Returns ``(new_state, output)``."""
    state = (state + _GOLDEN) & MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return state, z ^ (z >> 31)


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & MASK64


class Rng:
    """xoshiro256** generator with splitmix64 seeding and substreams."""

    def __init__(self, seed: int = 0):
        self._seed = int(seed) & MASK64
        sm = self._seed
        words = []
        for _ in range(4):
            sm, out = splitmix64(sm)
            words.append(out)
        self._s = words

    @property
    def seed(self) -> int:
        return self._seed

    def substream(self, index: int) -> "Rng":
        """Independent generator for ``(seed, index)``."""
        _, mixed = splitmix64((int(index) * _GOLDEN) & MASK64)
        return Rng(self._seed ^ mixed)

    def get_state(self) -> tuple[int, int, int, int, int]:
        """Seed plus the four state words."""
        return (self._seed, *self._s)

    def set_state(self, state: Sequence[int]) -> None:
        seed, *words = (int(v) for v in state)
        if len(words) != 4:
            raise ValueError("Rng state needs a seed and four 64-bit words")
        self._seed = seed & MASK64
        self._s = [w & MASK64 for w in words]

    def next_u64(self) -> int:
        """Next raw 64-bit output."""
        return self._block(1)[0]

    def _block(self, n: int) -> list[int]:
        s0, s1, s2, s3 = self._s
        out = []
        append = out.append
        for _ in range(n):
            x = (s1 * 5) & MASK64
            append((((x << 7) | (x >> 57)) & MASK64) * 9 & MASK64)
            t = (s1 << 17) & MASK64
            s2 ^= s0
            s3 ^= s1
            s1 ^= s2
            s0 ^= s3
            s2 ^= t
            s3 = ((s3 << 45) | (s3 >> 19)) & MASK64
        self._s = [s0, s1, s2, s3]
        return out

    def random(self, size: int | Sequence[int] | None = None) -> float | np.ndarray:
        """Uniform doubles in [0, 1) with 53 bits of precision."""
        if size is None:
            return (self._block(1)[0] >> 11) * _INV_2_53
        shape = (size,) if isinstance(size, int) else tuple(size)
        n = math.prod(shape)
        raw = np.array(self._block(n), dtype=np.uint64) >> np.uint64(11)
        return (raw.astype(np.float64) * _INV_2_53).reshape(shape)

    def uniform(
        self,
        low: float = 0.0,
        high: float = 1.0,
        size: int | Sequence[int] | None = None,
    ) -> float | np.ndarray:
        """Uniform samples in ``[low, high]``."""
        if low > high:
            raise ValueError(f"uniform bounds out of order: {low} > {high}")
        u = self.random(size)
        return low + (high - low) * u

    def normal(
        self,
        mean: float = 0.0,
        std: float = 1.0,
        size: int | Sequence[int] | None = None,
    ) -> float | np.ndarray:
        """Gaussian samples by the Box-Muller transform."""
        if std < 0:
            raise ValueError(f"standard deviation must be non-negative, got {std}")
        shape = () if size is None else ((size,) if isinstance(size, int) else tuple(size))
        n = math.prod(shape)
        pairs = (n + 1) // 2
        u = self.random(2 * pairs).reshape(pairs, 2)
        radius = np.sqrt(-2.0 * np.log1p(-u[:, 0]))
        theta = _TWO_PI * u[:, 1]
        z = np.concatenate([radius * np.cos(theta), radius * np.sin(theta)])[:n]
        values = mean + std * z
        if size is None:
            return float(values[0])
        return values.reshape(shape)

    def integers(self, low: int, high: int) -> int:
        """Uniform integer in ``[low, high)``."""
        if high <= low:
            raise ValueError(f"empty integer range [{low}, {high})")
        return low + int(self.random() * (high - low))

    def bernoulli(self, p: float) -> bool:
        return self.random() < p

    def permutation(self, n: int) -> list[int]:
        """Fisher-Yates shuffle of ``range(n)``."""
        order = list(range(n))
        for i in range(n - 1, 0, -1):
            j = self.integers(0, i + 1)
            order[i], order[j] = order[j], order[i]
        return order
