"""Counter-based randomness: splitmix64 mixing and stream/key derivation.

Every random quantity in the lab is a pure function of a 64-bit key, so
environments can be queried lazily on the infinite lattice and replicas can be
re-run bit-exactly in any order.  The numba kernels in ``_kernels`` implement
the same mixing; ``tests/test_walker.py`` cross-checks the two.
"""

from __future__ import annotations

import numpy as np

U64 = np.uint64
_MASK = (1 << 64) - 1

GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB

# Domain-separation tags for per-replica subkeys.
TAG_ENV = 0xE17A
TAG_MARKS = 0x3A9C
TAG_STEPS = 0x51D7


def mix64(z: int) -> int:
    """splitmix64 finalizer on a python int (mod 2^64)."""
    z &= _MASK
    z = ((z ^ (z >> 30)) * _MIX1) & _MASK
    z = ((z ^ (z >> 27)) * _MIX2) & _MASK
    return z ^ (z >> 31)


def hash_key(*parts: int) -> int:
    """Fold integer parts into one 64-bit key (order-sensitive)."""
    h = 0x8E58_51F4_2D1C_B3A7
    for p in parts:
        h = mix64((h ^ ((p & _MASK) * GOLDEN)) & _MASK)
    return h


def subkey(seed: int, replica: int, tag: int) -> int:
    """Per-replica subkey; environment and walk use disjoint tags."""
    return hash_key(seed, replica, tag)


def mix64_array(z: np.ndarray) -> np.ndarray:
    """Vectorized splitmix64 finalizer on a uint64 array."""
    z = z.astype(U64, copy=True)
    with np.errstate(over="ignore"):
        z ^= z >> U64(30)
        z *= U64(_MIX1)
        z ^= z >> U64(27)
        z *= U64(_MIX2)
        z ^= z >> U64(31)
    return z


def hash_coords(seed: int, coords: np.ndarray) -> np.ndarray:
    """Keyed hash of lattice sites, one uint64 per row of ``coords``."""
    coords = np.atleast_2d(np.asarray(coords, dtype=np.int64))
    with np.errstate(over="ignore"):
        h = np.full(coords.shape[0], U64(seed ^ 0x8E5851F42D1CB3A7), dtype=U64)
        for k in range(coords.shape[1]):
            h = mix64_array(h ^ (coords[:, k].astype(U64) * U64(GOLDEN) + U64(k + 1)))
    return h


def to_unit(h: np.ndarray | int):
    """Map uint64 hashes to floats in [0, 1)."""
    if isinstance(h, (int, np.integer)):
        return (int(h) >> 11) * 2.0**-53
    return (h >> U64(11)).astype(np.float64) * 2.0**-53


class SplitMixStream:
    """Sequential splitmix64 stream (python-side mirror of the numba one)."""

    def __init__(self, seed: int):
        self._state = seed & _MASK

    def next_unit(self) -> float:
        self._state = (self._state + GOLDEN) & _MASK
        return to_unit(mix64(self._state))

    def units(self, n: int) -> np.ndarray:
        start = self._state
        states = (start + GOLDEN * np.arange(1, n + 1, dtype=np.uint64)).astype(U64)
        self._state = (start + GOLDEN * n) & _MASK
        return to_unit(mix64_array(states))
