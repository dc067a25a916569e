"""Seed handling.

Every stochastic operation takes either an integer seed or a ready
``numpy.random.Generator``. Sub-streams are derived from (seed, tag...) int
tuples so that reordering unrelated draws never perturbs a stream.
"""

from __future__ import annotations

import numpy as np

RngLike = "int | np.random.Generator"


def as_generator(seed: int | np.random.Generator) -> np.random.Generator:
    """Return a Generator, seeding a fresh PCG64 when given an int."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed))))


def child_generator(seed: int, *tags: int) -> np.random.Generator:
    """Derive an independent stream keyed by (seed, *tags)."""
    entropy = [int(seed)] + [int(t) for t in tags]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))
