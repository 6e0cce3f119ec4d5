"""Counter-based splitmix64 streams.

Every trial owns a 64-bit key derived from (seed, stream, delay index, trial
index); draw ``n`` of a trial is ``mix64(key + GOLDEN * (n + 1))``.  The same
arithmetic is implemented in the compiled kernel, so both backends consume
identical random numbers regardless of trial ordering.
"""

from __future__ import annotations

import numpy as np

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30, _S27, _S31, _S11 = (np.uint64(s) for s in (30, 27, 31, 11))
_INV53 = 2.0**-53

STREAM_DYNAMICS = 0
STREAM_DETECTION = 1


def mix64(z: np.ndarray) -> np.ndarray:
    """splitmix64 finalizer on a uint64 array (wrapping arithmetic)."""
    z = np.asarray(z, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = (z ^ (z >> _S30)) * _M1
        z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


def _offset(index) -> np.ndarray:
    with np.errstate(over="ignore"):
        return (np.asarray(index, dtype=np.uint64) + np.uint64(1)) * GOLDEN


def trial_keys(seed: int, stream: int, delay_index: int, trial_index) -> np.ndarray:
    """Keys for a batch of trials; ``trial_index`` is an integer array."""
    with np.errstate(over="ignore"):
        k = mix64(np.array([seed & 0xFFFFFFFFFFFFFFFF], dtype=np.uint64) + _offset(stream))
        k = mix64(k + _offset(delay_index))
        return mix64(k + _offset(trial_index))


def to_uniform(x: np.ndarray) -> np.ndarray:
    """Map uint64 to doubles on (0, 1]."""
    return ((x >> _S11).astype(np.float64) + 1.0) * _INV53


def draw(keys: np.ndarray, counter) -> np.ndarray:
    """Uniform draw number ``counter`` (scalar or per-key array) for each key."""
    with np.errstate(over="ignore"):
        return to_uniform(mix64(keys + _offset(counter)))
