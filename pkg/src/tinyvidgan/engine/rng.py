"""Seedable counter-based random number generation.

All stochastic behaviour in the package (weight init, latent sampling,
dropout masks, RANSAC draws, pair shuffling) flows through
:class:`SplitMix64`, so a run is fully reproducible from its seed and the
generator is simple enough to re-implement anywhere.

The bit stream is the SplitMix64 sequence: draw ``i`` (0-based) of stream
``seed`` is ``mix(seed + (i + 1) * GAMMA)`` over 64-bit wrapping arithmetic
with

    GAMMA = 0x9E3779B97F4A7C15
    mix(z): z ^= z >> 30; z *= 0xBF58476D1CE4E5B9
            z ^= z >> 27; z *= 0x94D049BB133111EB
            z ^= z >> 31

Uniforms in [0, 1) are ``(bits >> 11) * 2**-53``. Normal draws use the
Box-Muller transform on consecutive pairs (u1, u2) with
``u1 = ((bits1 >> 11) + 1) * 2**-53`` in (0, 1]:

    z0 = sqrt(-2 ln u1) cos(2 pi u2),  z1 = sqrt(-2 ln u1) sin(2 pi u2)

Bounded integers are ``lo + bits % (hi - lo)`` (modulo bias is negligible
for the desk-scale ranges used here).
"""
from __future__ import annotations

import numpy as np

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_U53 = float(2.0 ** -53)


def _mix(z: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * _MIX1
        z = (z ^ (z >> np.uint64(27))) * _MIX2
        return z ^ (z >> np.uint64(31))


class SplitMix64:
    """One independent random stream identified by a 64-bit seed."""

    def __init__(self, seed: int):
        self._seed = np.uint64(seed & 0xFFFFFFFFFFFFFFFF)
        self._counter = 0

    @property
    def seed(self) -> int:
        return int(self._seed)

    @property
    def counter(self) -> int:
        """Number of 64-bit draws consumed so far."""
        return self._counter

    @classmethod
    def from_state(cls, seed: int, counter: int) -> "SplitMix64":
        """Rebuild a stream mid-sequence (checkpoint resume)."""
        rng = cls(seed)
        rng._counter = int(counter)
        return rng

    def next_u64(self, n: int) -> np.ndarray:
        """Return the next ``n`` raw 64-bit draws."""
        idx = np.arange(self._counter + 1, self._counter + n + 1, dtype=np.uint64)
        self._counter += n
        with np.errstate(over="ignore"):
            return _mix(self._seed + idx * _GAMMA)

    def uniform(self, shape=(), low: float = 0.0, high: float = 1.0) -> np.ndarray:
        n = int(np.prod(shape)) if shape else 1
        u = (self.next_u64(n) >> np.uint64(11)).astype(np.float64) * _U53
        out = low + u * (high - low)
        return out.reshape(shape) if shape else out[0]

    def normal(self, shape=(), mean: float = 0.0, std: float = 1.0) -> np.ndarray:
        n = int(np.prod(shape)) if shape else 1
        pairs = (n + 1) // 2
        bits = self.next_u64(2 * pairs)
        u1 = ((bits[0::2] >> np.uint64(11)).astype(np.float64) + 1.0) * _U53
        u2 = (bits[1::2] >> np.uint64(11)).astype(np.float64) * _U53
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * np.pi * u2
        z = np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:n]
        out = mean + std * z
        return out.reshape(shape) if shape else out[0]

    def integers(self, low: int, high: int, shape=()) -> np.ndarray:
        """Integers in [low, high). ``high`` must exceed ``low``."""
        if high <= low:
            raise ValueError(f"empty integer range [{low}, {high})")
        n = int(np.prod(shape)) if shape else 1
        vals = (self.next_u64(n) % np.uint64(high - low)).astype(np.int64) + low
        return vals.reshape(shape) if shape else int(vals[0])

    def permutation(self, n: int) -> np.ndarray:
        """Deterministic permutation of range(n) via random sort keys."""
        return np.argsort(self.next_u64(n), kind="stable")

    def split(self, tag: int) -> "SplitMix64":
        """Derive an independent child stream; stable for a given tag."""
        with np.errstate(over="ignore"):
            child = _mix(self._seed + np.uint64((tag + 1) & 0xFFFFFFFFFFFFFFFF) * _MIX1)
        return SplitMix64(int(child))
