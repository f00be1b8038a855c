"""Counter-based uniforms: SplitMix64 finaliser over (seed, stream, step, draw).

Every random number used by the samplers is a pure function of its
coordinates, so episodes can be generated in any order, in any number of
chunks, and still come out bit-identical. Each episode is its own substream
(``stream`` = episode index).
"""
from __future__ import annotations

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_MASK = (1 << 64) - 1


def _mix64(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def counter_bits(seed: int, stream, step: int, draw: int) -> np.ndarray:
    """64-bit hashes; ``stream`` may be an array of substream ids."""
    stream = np.asarray(stream, dtype=np.uint64)
    with np.errstate(over="ignore"):
        key = _mix64(np.uint64(int(seed) & _MASK) + _GOLDEN)
        h = _mix64(key + stream * _GOLDEN)
        ctr = np.uint64(((int(step) << 8) | (int(draw) & 0xFF)) & _MASK)
        return _mix64(h ^ (ctr * _GOLDEN + _GOLDEN))


def counter_uniform(seed: int, stream, step: int, draw: int) -> np.ndarray:
    """Uniforms on [0, 1) with 53 bits of precision."""
    bits = counter_bits(seed, stream, step, draw)
    return (bits >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)
