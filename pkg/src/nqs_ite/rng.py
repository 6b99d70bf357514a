"""Counter-based, splittable random streams (SplitMix64 finalizer over a counter).

Every stream is identified by a 64-bit key derived by hashing
``(seed, purpose, stream id)``; draw ``k`` of a stream is ``mix(key + k * gamma)``.
Draws depend only on ``(key, counter)``, so a vector of per-walker streams
advances in lock step and the whole state is one integer counter.
"""

from __future__ import annotations

import numpy as np

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_MASK = (1 << 64) - 1

# purpose tags keep independent roles of one master seed apart
WALKERS = 0x57414C4B
FINAL = 0x46494E4C
INIT = 0x494E4954


def mix64(x: np.ndarray) -> np.ndarray:
    """SplitMix64 output function, vectorized over uint64 arrays."""
    z = np.array(x, dtype=np.uint64, copy=True)
    z ^= z >> np.uint64(30)
    z *= _M1
    z ^= z >> np.uint64(27)
    z *= _M2
    z ^= z >> np.uint64(31)
    return z


def derive_key(seed: int, *path: int) -> int:
    """Hash a seed and a path of integers into a stream key."""
    k = np.array([seed & _MASK], dtype=np.uint64)
    for p in path:
        k = mix64(k ^ np.uint64(p & _MASK)) + _GAMMA
    return int(mix64(k)[0])


class StreamSet:
    """``n_streams`` parallel counter-based streams sharing one counter."""

    def __init__(self, seed: int, purpose: int, n_streams: int, counter: int = 0):
        self.seed = int(seed)
        self.purpose = int(purpose)
        self.n_streams = int(n_streams)
        self.counter = int(counter)
        base = derive_key(self.seed, self.purpose)
        ids = np.arange(self.n_streams, dtype=np.uint64)
        self._keys = mix64(np.uint64(base) ^ mix64(ids * _GAMMA + np.uint64(1)))

    def bits(self, n_draws: int) -> np.ndarray:
        """Raw uint64 draws, shape (n_streams, n_draws)."""
        ctr = (np.arange(n_draws, dtype=np.uint64) + np.uint64(self.counter)) * _GAMMA
        self.counter += n_draws
        return mix64(self._keys[:, None] + ctr[None, :])

    def uniform(self, n_draws: int = 1) -> np.ndarray:
        """Uniform doubles on [0, 1), shape (n_streams, n_draws)."""
        return (self.bits(n_draws) >> np.uint64(11)).astype(np.float64) * 2.0**-53

    def state(self) -> tuple[int, int, int, int]:
        return self.seed, self.purpose, self.n_streams, self.counter

    @classmethod
    def from_state(cls, state) -> "StreamSet":
        seed, purpose, n_streams, counter = state
        return cls(seed, purpose, n_streams, counter)
