"""Counter-based random streams keyed by ``(seed, stream_id)``.

Brownian increments come from a SplitMix64 hash of the counter
``(step, particle)`` so that the draw for one particle at one step never
depends on how many particles, replicas or threads share the computation.
Everything else (exact transitions, Monte Carlo oracles) uses numpy's Philox
generator positioned at a counter block derived from the same key.
"""

from __future__ import annotations

import numpy as np
from scipy.special import ndtri

__all__ = ["StreamRNG", "brownian_normals", "stream_key"]

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_MASK = (1 << 64) - 1


def _mix(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def _mix_int(z: int) -> int:
    z &= _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def stream_key(seed: int, stream_id: int) -> int:
    if seed < 0 or stream_id < 0:
        raise ValueError("seed and stream_id are unsigned")
    return _mix_int(_mix_int(seed + 0x9E3779B97F4A7C15) ^ (stream_id * 0xD1B54A32D192ED03 & _MASK))


def brownian_normals(keys: np.ndarray, step: int, n: int) -> np.ndarray:
    """Standard normals of shape ``(len(keys), n)`` for one time step.

    Entry ``[r, i]`` depends only on ``(keys[r], step, i)``.
    """
    if n >= 1 << 32:
        raise ValueError("too many particles for the counter layout")
    keys = np.asarray(keys, dtype=np.uint64)
    with np.errstate(over="ignore"):
        ctr = (np.uint64(step) << np.uint64(32)) + np.arange(n, dtype=np.uint64) + np.uint64(1)
        h = _mix(keys[:, None] + ctr[None, :] * _GAMMA)
    u = ((h >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53
    return ndtri(u)


class StreamRNG:
    """One reproducible random stream; a value type that can be copied freely."""

    # Philox lanes, so different purposes never share a counter block.
    LANE_INIT = 1
    LANE_EXACT = 2
    LANE_AUX = 3

    __slots__ = ("seed", "stream_id", "key")

    def __init__(self, seed: int, stream_id: int = 0):
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        self.key = stream_key(self.seed, self.stream_id)

    def __repr__(self) -> str:
        return f"StreamRNG(seed={self.seed}, stream_id={self.stream_id})"

    def normals(self, step: int, n: int) -> np.ndarray:
        return brownian_normals(np.array([self.key], dtype=np.uint64), step, n)[0]

    def generator(self, block: int = 0, lane: int = LANE_AUX) -> np.random.Generator:
        """A numpy Generator whose output is fixed by ``(key, lane, block)``."""
        bg = np.random.Philox(key=[self.key, lane], counter=[0, 0, int(block), 0])
        return np.random.Generator(bg)
