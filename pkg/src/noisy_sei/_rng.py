"""Seed handling shared by every stochastic routine.

All randomness is keyed: a seed is an int, a tuple of ints, or a ready
``Generator``.  Tuples are hashed through ``SeedSequence`` so a sample's
stream depends only on (root seed, stream tag, indices), never on the
order in which samples are visited.
"""
from __future__ import annotations

from typing import Sequence, Union

import numpy as np

SeedLike = Union[int, Sequence[int], np.random.SeedSequence, np.random.Generator]

# stream tags keep sub-streams of one root seed disjoint
STREAM_BASEBAND = 1
STREAM_IMPAIR = 2
STREAM_CHANNEL = 3
STREAM_PROFILES = 4
STREAM_SPLIT = 10
STREAM_NOISE = 11
STREAM_AUG = 20
STREAM_SHUFFLE = 21
STREAM_QUEUE = 22
STREAM_INIT = 23
STREAM_DROPOUT = 24
STREAM_RESCUE = 30
STREAM_FINAL = 40


def seed_seq(seed: SeedLike, *keys: int) -> np.random.SeedSequence:
    if isinstance(seed, np.random.Generator):
        raise TypeError("a Generator cannot be re-keyed; pass an int seed")
    if isinstance(seed, np.random.SeedSequence):
        base = seed.entropy if isinstance(seed.entropy, (list, tuple)) else [seed.entropy]
        base = list(base) + list(seed.spawn_key)
    elif isinstance(seed, (int, np.integer)):
        base = [int(seed)]
    else:
        base = [int(s) for s in seed]
    for b in base:
        if b < 0:
            raise ValueError(f"seed components must be non-negative, got {b}")
    return np.random.SeedSequence(base + [int(k) for k in keys])


def rng(seed: SeedLike, *keys: int) -> np.random.Generator:
    """Return a Generator for ``seed`` extended by ``keys``."""
    if isinstance(seed, np.random.Generator):
        if keys:
            raise TypeError("a Generator cannot be re-keyed; pass an int seed")
        return seed
    return np.random.default_rng(seed_seq(seed, *keys))
