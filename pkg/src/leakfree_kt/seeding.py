"""Named random sub-streams derived from one root seed."""

from __future__ import annotations

import zlib

import numpy as np


def seed_sequence(root: int, name: str, *extra: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(root), zlib.crc32(name.encode()), *map(int, extra)])


def rng_for(root: int, name: str, *extra: int) -> np.random.Generator:
    return np.random.default_rng(seed_sequence(root, name, *extra))


def int_seed(root: int, name: str, *extra: int) -> int:
    """A 63-bit integer seed for libraries that want a plain int (torch)."""
    return int(seed_sequence(root, name, *extra).generate_state(2, np.uint64)[0] >> np.uint64(1))
