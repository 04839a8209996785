"""Deterministic named sub-streams derived from one root seed.

Every source of randomness in a run (weight init, shuffling, probe batches,
stream generation, ...) draws from its own named generator so that changing
one consumer never perturbs the others.
"""

from __future__ import annotations

import zlib

import numpy as np


def named_rng(root_seed: int, *keys) -> np.random.Generator:
    """Generator for the sub-stream identified by (root_seed, *keys).

    Keys may be strings or integers; strings are hashed with crc32, which is
    stable across platforms and Python versions.
    """
    entropy = [int(root_seed) & 0xFFFFFFFF]
    for key in keys:
        if isinstance(key, (int, np.integer)):
            entropy.append(int(key) & 0xFFFFFFFF)
        else:
            entropy.append(zlib.crc32(str(key).encode("utf-8")))
    return np.random.default_rng(np.random.SeedSequence(entropy))
