"""Stateless seed derivation.

Every stochastic choice (weight init, dropout masks, shuffles, view pairs)
draws from a generator seeded by a pure function of (root seed, purpose tag,
counters). Runs are therefore reproducible bit-for-bit and training can be
checkpointed and resumed without carrying generator state around.
"""

from __future__ import annotations

import numpy as np

# purpose tags; values are arbitrary but frozen
TAG_INIT = 1
TAG_PRETRAIN_SHUFFLE = 2
TAG_TRAIN_SHUFFLE = 3
TAG_DROPOUT = 4
TAG_VIEW = 5
TAG_SPLIT = 6
TAG_SYNTH = 7
TAG_PRETRAIN_BATCH = 8
TAG_TRAIN_BATCH = 9


def derive_seed(*parts: int) -> int:
    """Collapse a tuple of non-negative ints into one 64-bit seed."""
    keys = [int(p) for p in parts]
    if any(k < 0 for k in keys):
        raise ValueError("seed parts must be non-negative")
    return int(np.random.SeedSequence(keys).generate_state(1, np.uint64)[0])


def rng_for(*parts: int) -> np.random.Generator:
    return np.random.default_rng(derive_seed(*parts))
