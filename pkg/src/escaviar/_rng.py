"""Seed handling: every task derives its stream from a master seed by spawning."""

import numpy as np


def seed_sequence(seed) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        return seed
    return np.random.SeedSequence(seed)


def spawn(seed, n: int) -> list:
    """Children ``0..n-1`` of ``seed``.

    Unlike ``SeedSequence.spawn`` this does not advance the parent, so the
    same seed object always yields the same children.
    """
    ss = seed_sequence(seed)
    return [np.random.SeedSequence(ss.entropy, spawn_key=ss.spawn_key + (i,), pool_size=ss.pool_size)
            for i in range(n)]
