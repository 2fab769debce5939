"""Seeded, portable random number generator.

The generator is SplitMix64 used in counter mode: draw ``i`` from seed ``s``
is ``mix64(s + i * GOLDEN)`` where ``mix64`` is the xorshift-multiply
finalizer

    z ^= z >> 30; z *= 0xBF58476D1CE4E5B9
    z ^= z >> 27; z *= 0x94D049BB133111EB
    z ^= z >> 31

with all arithmetic modulo 2**64 and GOLDEN = 0x9E3779B97F4A7C15.
Counter form makes block draws vectorizable and keeps the stream identical
for any call-size pattern covering the same indices. Streams are split by
drawing one word and using it as a child seed.

Everything is deterministic given the seed; the platform RNG is never used.
"""

from __future__ import annotations

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_U64_MASK = (1 << 64) - 1

# float in [0, 1) from the top 53 bits of a word
_INV_2_53 = float(2.0 ** -53)


def _mix64(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


class Rng:
    """Splittable counter-based generator; identical seed => identical stream."""

    def __init__(self, seed: int):
        self._seed = np.uint64(int(seed) & _U64_MASK)
        self._counter = 0  # python int, never overflows

    @property
    def seed(self) -> int:
        return int(self._seed)

    def _raw(self, n: int) -> np.ndarray:
        """Next n words of the stream as a uint64 array."""
        if n < 0:
            raise ValueError("draw count must be >= 0")
        idx = np.arange(self._counter + 1, self._counter + n + 1, dtype=np.uint64)
        self._counter += n
        return _mix64(self._seed + idx * _GOLDEN)

    def next_u64(self) -> int:
        return int(self._raw(1)[0])

    def split(self) -> "Rng":
        """Child generator seeded with the next word of this stream."""
        return Rng(self.next_u64())

    def uniform(self, n: int) -> np.ndarray:
        """n float64 samples in [0, 1)."""
        return (self._raw(n) >> np.uint64(11)).astype(np.float64) * _INV_2_53

    def normal(self, n: int) -> np.ndarray:
        """n float64 standard-normal samples via Box-Muller.

        Consumes exactly 2*ceil(n/2) words: the first half feed the radius,
        the second half the angle, so consumption depends only on n.
        """
        m = (n + 1) // 2
        if m == 0:
            return np.empty(0, dtype=np.float64)
        bits = self._raw(2 * m)
        # radius uniform must avoid 0 for the log; shift into (0, 1]
        u1 = ((bits[:m] >> np.uint64(11)).astype(np.float64) + 1.0) * _INV_2_53
        u2 = (bits[m:] >> np.uint64(11)).astype(np.float64) * _INV_2_53
        r = np.sqrt(-2.0 * np.log(u1))
        theta = (2.0 * np.pi) * u2
        return np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:n]

    def randint(self, lo: int, hi: int) -> int:
        """Integer in [lo, hi). Modulo reduction; bias < 2**-40 for the
        span sizes used here (image coordinates, class counts)."""
        if hi <= lo:
            raise ValueError(f"empty range [{lo}, {hi})")
        return lo + self.next_u64() % (hi - lo)

    def randints(self, n: int, lo: int, hi: int) -> np.ndarray:
        if hi <= lo:
            raise ValueError(f"empty range [{lo}, {hi})")
        return (lo + self._raw(n) % np.uint64(hi - lo)).astype(np.int64)

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates shuffle."""
        for i in range(len(items) - 1, 0, -1):
            j = self.randint(0, i + 1)
            items[i], items[j] = items[j], items[i]

    def choice(self, n: int, k: int) -> np.ndarray:
        """k indices drawn uniformly from range(n), with replacement."""
        return self.randints(k, 0, n)
