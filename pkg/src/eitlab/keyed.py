"""Counter-based keyed hashing used as the random source everywhere.

Every random quantity in the package is a pure function of a 64-bit key and a
tuple of integer words (vertex coordinates, indices, counters).  Streams are
therefore reproducible, order-free and randomly accessible.
"""
from __future__ import annotations

import hashlib

import numpy as np

_MASK = (1 << 64) - 1
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def derive_key(seed, *labels) -> int:
    """64-bit key from a seed value and domain-separation labels."""
    h = hashlib.blake2b(digest_size=8)
    h.update(repr(seed).encode())
    for label in labels:
        h.update(b"\x1f")
        h.update(repr(label).encode())
    return int.from_bytes(h.digest(), "little")


def _u64(x) -> np.ndarray:
    if isinstance(x, (int, np.integer)):
        return np.atleast_1d(np.uint64(int(x) & _MASK))
    a = np.asarray(x)
    if a.dtype == np.uint64:
        return a
    return a.astype(np.int64).view(np.uint64)


def _mix(z: np.ndarray) -> np.ndarray:
    # splitmix64 finalizer
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def keyed_hash(key, *words) -> np.ndarray:
    """Hash ``words`` under ``key``; all arguments broadcast as uint64 arrays."""
    with np.errstate(over="ignore"):
        h = _u64(key)
        for i, w in enumerate(words):
            h = _mix(h ^ _mix(_u64(w) + _GOLDEN * np.uint64(i + 1)))
    return h


def to_uniform(h: np.ndarray) -> np.ndarray:
    """Map hashes to floats in [0, 1) using the top 53 bits."""
    return (h >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)


def to_sign(h: np.ndarray) -> np.ndarray:
    """Map hashes to +/-1 via the top bit."""
    return 1 - 2 * (h >> np.uint64(63)).astype(np.int64)


def to_index(h: np.ndarray, n: int) -> np.ndarray:
    """Map hashes to integers in [0, n)."""
    return np.floor(to_uniform(h) * n).astype(np.int64)


def subkeys(key: int, count: int, start: int = 0) -> np.ndarray:
    """Independent per-replica keys ``hash(key, i)`` for i in [start, start+count)."""
    return keyed_hash(key, np.arange(start, start + count, dtype=np.int64))
