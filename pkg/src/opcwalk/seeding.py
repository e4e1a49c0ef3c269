"""Keyed 64-bit seed derivation.

Every random stream in the package is addressed by a 64-bit seed. Child
seeds are derived from a parent seed, a text label and an integer index by
SplitMix64-style mixing, so adding a replica never perturbs the others.
"""

from __future__ import annotations

import hashlib

MASK64 = 0xFFFFFFFFFFFFFFFF
GOLDEN = 0x9E3779B97F4A7C15


def mix64(x: int) -> int:
    """SplitMix64 finalizer on a Python int (taken modulo 2**64)."""
    z = x & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def label_key(label: str) -> int:
    """Stable 64-bit key for a text label."""
    return int.from_bytes(hashlib.blake2b(label.encode("utf-8"), digest_size=8).digest(), "little")


def derive_seed(master: int, label: str, index: int = 0) -> int:
    """Derive the seed of stream ``(label, index)`` below ``master``.

    >>> derive_seed(1, "walk", 0) == derive_seed(1, "walk", 0)
    True
    >>> derive_seed(1, "walk", 0) != derive_seed(1, "walk", 1)
    True
    """
    h = mix64((master & MASK64) ^ GOLDEN)
    h = mix64(h ^ label_key(label))
    return mix64(h + GOLDEN * ((index & MASK64) + 1))


def seed_to_int(seed) -> int:
    """Accept ints (any sign) and numpy integers; return an unsigned 64-bit int."""
    return int(seed) & MASK64


def stream_seed(rng) -> int:
    """A 64-bit walk seed from an int seed or a ``numpy.random.Generator``."""
    if rng is None:
        return 0
    if hasattr(rng, "integers"):
        return int(rng.integers(0, 2**64, dtype="uint64"))
    return seed_to_int(rng)
