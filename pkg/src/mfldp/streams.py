"""Counter-based Gaussian noise streams.

Every draw is a pure function of ``(master_seed, tag, replica, particle,
counter)``: the first four are hashed into a 64-bit key, the counter indexes
the stream (``step * d + component``).  There is no generator state, so
replicas and particles can be simulated in any order or batch layout and
produce bitwise identical noise.
"""

from __future__ import annotations

import numpy as np
from scipy.special import ndtri

__all__ = ["stream_keys", "normals", "uniforms", "TAG_PARTICLE", "TAG_PROXY", "TAG_TRACKED"]

TAG_PARTICLE = 0
TAG_PROXY = 1
TAG_TRACKED = 2

_MASK = (1 << 64) - 1
_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def _mix(z: np.ndarray) -> np.ndarray:
    """SplitMix64 finalizer (wrapping uint64 arithmetic)."""
    with np.errstate(over="ignore"):
        z = z + _GAMMA
        z = (z ^ (z >> np.uint64(30))) * _M1
        z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def _u64(x) -> np.ndarray:
    arr = np.asarray(x)
    if arr.dtype.kind not in "iu" or np.any(arr < 0):
        raise ValueError("stream indices must be nonnegative integers")
    return arr.astype(np.uint64)


def stream_keys(master_seed: int, replica, particle, tag: int = TAG_PARTICLE) -> np.ndarray:
    """Keys for the broadcast grid of ``replica`` and ``particle`` indices."""
    seed = np.uint64(int(master_seed) & _MASK)
    base = _mix(np.asarray(seed) ^ _mix(np.asarray(np.uint64(tag))))
    rep, part = np.broadcast_arrays(_u64(replica), _u64(particle))
    with np.errstate(over="ignore"):
        k = _mix(base + _mix(rep))
        return _mix(k + _mix(part + np.uint64(0x632BE59BD9B4E019)))


def uniforms(keys: np.ndarray, start: int, count: int) -> np.ndarray:
    """Uniform draws in (0, 1) at counters ``start..start+count-1``; shape ``keys.shape + (count,)``."""
    ctr = _mix(np.arange(start, start + count, dtype=np.uint64))
    h = _mix(keys[..., None] ^ ctr)
    return ((h >> np.uint64(11)).astype(np.float64) + 0.5) * (1.0 / 9007199254740992.0)


def normals(keys: np.ndarray, start: int, count: int) -> np.ndarray:
    """Standard normal draws by inverse CDF of :func:`uniforms`."""
    return ndtri(uniforms(keys, start, count))
