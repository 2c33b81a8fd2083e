"""Deterministic randomness.

Every random draw in the package flows from a single 64-bit seed through
Philox, a counter-based generator, split into independent named streams via
``numpy.random.SeedSequence`` spawn keys. The same (seed, path) always yields
the same stream, on any platform.
"""

import hashlib

import numpy as np

_U32 = 2**32
_U64 = 2**64


def _subkey(part) -> int:
    if isinstance(part, (int, np.integer)):
        if part < 0:
            raise ValueError("rng path components must be non-negative")
        return int(part) % _U32
    digest = hashlib.sha256(str(part).encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "little")


def spawn(seed: int, *path) -> np.random.Generator:
    """Generator for `seed` at a derivation path of ints and/or labels."""
    ss = np.random.SeedSequence(int(seed) % _U64, spawn_key=tuple(_subkey(p) for p in path))
    return np.random.Generator(np.random.Philox(ss))


def derive_seed(seed: int, *path) -> int:
    """A fresh 63-bit seed derived from (seed, path), for APIs that take seeds."""
    return int(spawn(seed, *path).integers(0, 2**63))
