"""Seeded random streams.

Every stochastic stage draws from a named substream of one root seed, so
each stage is reproducible on its own and independent of the others.
"""

from __future__ import annotations

import hashlib

import numpy as np


def named_rng(seed: int, name: str) -> np.random.Generator:
    """Generator for substream `name` of root `seed`.

    The name is hashed with sha256 (process-stable, unlike ``hash``), so the
    same (seed, name) pair yields the same stream in every run.
    """
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    key = tuple(int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4))
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=key))
