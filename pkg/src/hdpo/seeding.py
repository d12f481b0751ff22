"""Derived random streams.

Every random draw in a run comes from a generator keyed on
``(seed, stream, *indices)``, so results never depend on call order,
batching, or which other streams were consumed.
"""

from __future__ import annotations

import numpy as np

STREAMS = {"batch": 1, "rollout": 2, "privileged": 3, "eval": 4, "init": 5, "valid": 6, "warmstart": 7}


def rng_for(seed: int, stream: str, *indices: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), STREAMS[stream], *(int(i) for i in indices)])


def rollout_uniforms(seed: int, stream: str, n_rollouts: int, max_len: int, *indices: int) -> np.ndarray:
    """One row of uniforms per rollout, each from its own stream."""
    return np.stack([rng_for(seed, stream, *indices, j).random(max_len) for j in range(n_rollouts)])
