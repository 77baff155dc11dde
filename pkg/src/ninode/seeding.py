"""Deterministic RNG streams derived from one master seed.

Every randomized component (net init, sampling checks, sweep cells) owns a
stream addressed by a stable integer key path, so runs reproduce
bit-identically for a fixed seed regardless of execution order.
"""

from __future__ import annotations

import numpy as np

__all__ = ["rng_stream"]


def rng_stream(master_seed: int, *key: int) -> np.random.Generator:
    """Generator for the stream addressed by ``key`` under ``master_seed``."""
    ss = np.random.SeedSequence(entropy=int(master_seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(ss))
