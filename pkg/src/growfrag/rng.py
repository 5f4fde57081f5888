"""Counter-based splittable random streams.

Every Monte Carlo path ``i`` of a run with master seed ``s`` owns the stream
``key(s, i)``; the k-th draw of that stream is ``mix64(key + (k + 1) * GAMMA)``
(SplitMix64 output function).  Draws therefore depend only on ``(s, i, k)``
and never on how paths are scheduled across threads.
"""
from __future__ import annotations

import numpy as np
from numba import njit

MASK64 = (1 << 64) - 1
GAMMA = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB
_INV53 = 2.0 ** -53


def mix64(z: int) -> int:
    z &= MASK64
    z = ((z ^ (z >> 30)) * _M1) & MASK64
    z = ((z ^ (z >> 27)) * _M2) & MASK64
    return z ^ (z >> 31)


def stream_key(seed: int, index: int) -> int:
    """Key of stream ``index`` under master ``seed``."""
    return mix64(mix64(seed & MASK64) ^ mix64((index * GAMMA + 0x632BE59BD9B4E019) & MASK64))


def derive_seed(seed: int, tag: int) -> int:
    """Independent master seed for a sub-task (e.g. a grid point)."""
    return mix64((seed & MASK64) + (tag + 1) * 0xD1B54A32D192ED03) >> 1


def seed_word(seed: int) -> np.uint64:
    """Pre-mixed master seed handed to the jitted kernels."""
    return np.uint64(mix64(seed & MASK64))


class Stream:
    """Pure-Python view of one stream; draws match the jitted ``uniform``."""

    def __init__(self, seed: int, index: int = 0):
        self.key = stream_key(seed, index)
        self.counter = 0

    def uniform(self) -> float:
        self.counter += 1
        out = mix64(self.key + self.counter * GAMMA)
        return ((out >> 11) + 0.5) * _INV53


@njit(cache=True, inline="always")
def _mix64(z):
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_M1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_M2)
    return z ^ (z >> np.uint64(31))


@njit(cache=True, inline="always")
def uniform(key, counter):
    """Draw number ``counter`` (1-based) of stream ``key``; always in (0, 1)."""
    out = _mix64(np.uint64(key) + np.uint64(counter) * np.uint64(GAMMA))
    return (np.float64(out >> np.uint64(11)) + 0.5) * _INV53


@njit(cache=True, inline="always")
def key_for(seed_word, index):
    """Jitted twin of ``stream_key`` taking ``seed_word(seed)``."""
    z = np.uint64(index) * np.uint64(GAMMA) + np.uint64(0x632BE59BD9B4E019)
    return _mix64(seed_word ^ _mix64(z))
