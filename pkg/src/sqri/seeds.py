"""Deterministic child RNG streams."""

from __future__ import annotations

import numpy as np


def as_seed_sequence(seed) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        return seed
    if seed is None:
        raise ValueError("a seed is required for reproducible runs")
    return np.random.SeedSequence(int(seed))


def child_seed(seed, *keys: int) -> np.random.SeedSequence:
    """Stream for ``keys`` under ``seed``; independent of how many siblings exist."""
    parent = as_seed_sequence(seed)
    return np.random.SeedSequence(parent.entropy,
                                  spawn_key=tuple(parent.spawn_key) + tuple(int(k) for k in keys))


def seed_label(seed) -> str:
    """Compact text form: the integer itself, or ``entropy/k1.k2...`` for a child stream."""
    if isinstance(seed, (int, np.integer)):
        return str(int(seed))
    seq = as_seed_sequence(seed)
    keys = ".".join(str(k) for k in seq.spawn_key)
    return f"{seq.entropy}/{keys}" if keys else str(seq.entropy)


def child_rng(seed, *keys: int) -> np.random.Generator:
    return np.random.default_rng(child_seed(seed, *keys))
