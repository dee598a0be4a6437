"""Splittable seeds.

Every random draw in a run is addressed by a path of non-negative integers
below the master seed, e.g. ``(round, client, epoch, batch, example, sign)``.
Since a stream depends only on its path, results do not change with how many
workers run or what order they finish in.
"""
from __future__ import annotations

import numpy as np
from numpy.random import SeedSequence


def as_seed_sequence(seed) -> SeedSequence:
    if isinstance(seed, SeedSequence):
        return seed
    if isinstance(seed, np.random.Generator):
        return SeedSequence(int(seed.integers(2 ** 63)))
    return SeedSequence(seed)


def derive(seed, *path: int) -> SeedSequence:
    """Child sequence at ``path`` below ``seed``."""
    base = as_seed_sequence(seed)
    return SeedSequence(base.entropy, spawn_key=tuple(base.spawn_key) + tuple(int(k) for k in path))


def rng(seed, *path: int) -> np.random.Generator:
    return np.random.default_rng(derive(seed, *path))


def resolve_master_seed(random_state) -> int:
    """Integer master seed for sklearn-style ``random_state`` (None draws fresh entropy)."""
    if random_state is None:
        return int(SeedSequence().entropy)
    if isinstance(random_state, np.random.Generator):
        return int(random_state.integers(2 ** 63))
    if isinstance(random_state, np.random.RandomState):
        return int(random_state.randint(2 ** 31))
    return int(random_state)
