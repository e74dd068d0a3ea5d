"""Deterministic RNG derivation.

Every random draw in the toolkit flows from one integer seed through
`derive_rng(seed, *path)`, where the path identifies the consumer (a tree
index, a repeat index, a learner index).  Streams for different paths are
independent, so parallel workers can own their stream and results never
depend on scheduling order.
"""

from __future__ import annotations

import numpy as np


def derive_rng(seed: int, *path: int) -> np.random.Generator:
    """Return a generator for the stream identified by (seed, *path)."""
    return np.random.default_rng(np.random.SeedSequence((int(seed), *map(int, path))))


def child_seed(seed: int, *path: int) -> int:
    """Collapse (seed, *path) into one integer seed for APIs that take one."""
    return int(np.random.SeedSequence((int(seed), *map(int, path))).generate_state(1)[0])
