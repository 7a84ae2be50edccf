"""Root-seed discipline: every consumer of randomness draws from a named substream."""

from __future__ import annotations

import zlib

import numpy as np


def substream(root_seed: int, name: str, *indices: int) -> np.random.Generator:
    """Deterministic generator for (root_seed, name, *indices).

    Distinct names or indices give statistically independent streams, so
    stages never perturb each other's randomness.
    """
    tag = zlib.crc32(name.encode("utf-8"))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence((root_seed, tag) + indices)))


def derive_seed(root_seed: int, name: str, *indices: int) -> int:
    """Plain integer seed derived from the same namespace as substream."""
    tag = zlib.crc32(name.encode("utf-8"))
    ss = np.random.SeedSequence((root_seed, tag) + indices)
    return int(ss.generate_state(1, np.uint64)[0])
