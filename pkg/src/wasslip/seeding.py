"""Named random streams derived from a single 64-bit master seed.

Each component asks for a stream by name, so reruns reproduce every stream
independently of how many other streams were consumed first.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def stream_key(name: str) -> int:
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def derive_rng(master_seed: int, name: str) -> np.random.Generator:
    """Generator for the stream `name`, fully determined by (seed, name)."""
    seq = np.random.SeedSequence([int(master_seed) & _MASK64, stream_key(name)])
    return np.random.Generator(np.random.PCG64(seq))


def derive_seed(master_seed: int, name: str) -> int:
    """A 64-bit child seed, for components that take an int rather than a rng."""
    return (int(master_seed) & _MASK64) ^ stream_key(name)
