"""Keyed, counter-based random streams.

Every random draw in a run comes from a Philox generator keyed by
``(seed, purpose, step)``.  A block drawn from one stream is laid out as
``(node, particle, coordinate)`` in C order, so the value a given particle sees
depends only on the key and its position, never on batching or worker count.
"""

from __future__ import annotations

import numpy as np

PURPOSES = {
    "init": 0,
    "noise": 1,
    "resample": 2,
    "outer": 3,
    "diversify": 4,
    "baseline": 5,
    "truth": 6,
    "eval": 7,
    "marginal": 8,
}

MAX_SEED = 2**64 - 1


def check_seed(seed) -> int:
    if isinstance(seed, bool) or int(seed) != seed or not 0 <= int(seed) <= MAX_SEED:
        raise ValueError(f"seed must be an integer in [0, 2**64), got {seed!r}")
    return int(seed)


def stream(seed: int, purpose: str, step: int = 0) -> np.random.Generator:
    code = PURPOSES[purpose]
    ss = np.random.SeedSequence(check_seed(seed), spawn_key=(code, int(step)))
    return np.random.Generator(np.random.Philox(ss))


def normal_block(seed: int, purpose: str, step: int, shape) -> np.ndarray:
    return stream(seed, purpose, step).standard_normal(shape)


def uniform_block(seed: int, purpose: str, step: int, shape) -> np.ndarray:
    return stream(seed, purpose, step).random(shape)
