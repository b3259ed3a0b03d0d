"""Deterministic counter-based random substreams.

Every random draw in the library comes from a Philox generator whose key is
derived from the run seed and whose 256-bit start counter encodes
``(tag, group, step)``.  Streams for different coordinates never overlap
because a stream only ever advances the low counter word by a handful of
blocks, while distinct coordinates differ in the high words.

Tags separate the independent uses of randomness inside one run so that,
e.g., the per-step mask draw is unaffected by how many minibatch shuffles
happened before it.
"""

from __future__ import annotations

import numpy as np

TAG_MASK = 0  # one mask draw per training step
TAG_BATCH = 1  # vectorized Monte Carlo mask batches
TAG_SHUFFLE = 2  # per-epoch minibatch order
TAG_SELECT = 3  # final multi-sample mask selection
TAG_DATA = 4  # task data generation
TAG_XI = 5  # minibatch draws for Monte Carlo statistics

_WORD = 1 << 64
_HALF = 1 << 32

_key_cache: dict[int, np.ndarray] = {}


def _key_for(seed: int) -> np.ndarray:
    key = _key_cache.get(seed)
    if key is None:
        key = np.random.SeedSequence(seed).generate_state(2, np.uint64)
        _key_cache[seed] = key
    return key


def substream(seed: int, step: int = 0, group: int = 0, tag: int = TAG_MASK) -> np.random.Generator:
    """Generator for the substream addressed by ``(seed, step, group, tag)``."""
    if not (0 <= step < _WORD):
        raise ValueError(f"step {step} outside [0, 2**64)")
    if not (0 <= group < _HALF):
        raise ValueError(f"group index {group} outside [0, 2**32)")
    if not (0 <= tag < _HALF):
        raise ValueError(f"tag {tag} outside [0, 2**32)")
    counter = (step << 128) | ((group | (tag << 32)) << 192)
    return np.random.Generator(np.random.Philox(key=_key_for(seed), counter=counter))
