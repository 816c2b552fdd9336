"""
Seed derivation helpers.

All randomness flows through explicit numpy Generators. Child seeds are derived
from integer key paths with SeedSequence, so item k of a stream depends only on
(global_seed, k).
"""

from typing import Union

import numpy as np

SeedKey = Union[int, np.integer]


def _entropy(keys: tuple) -> list:
    entropy = []
    for key in keys:
        key = int(key)
        if key < 0:
            raise ValueError(f"Seed keys must be non-negative, got {key}")
        entropy.append(key)
    return entropy


def derive_seed(*keys: SeedKey) -> int:
    """Derive a 63-bit integer seed from a key path."""
    state = np.random.SeedSequence(_entropy(keys)).generate_state(2, dtype=np.uint32)
    return (int(state[0]) << 31) ^ int(state[1])


def derive_rng(*keys: SeedKey) -> np.random.Generator:
    """Generator for a key path, e.g. derive_rng(global_seed, batch_index)."""
    return np.random.default_rng(np.random.SeedSequence(_entropy(keys)))


def draw_seed(rng: np.random.Generator) -> int:
    """Draw a fresh non-negative seed from a generator."""
    return int(rng.integers(0, 2**63 - 1))
