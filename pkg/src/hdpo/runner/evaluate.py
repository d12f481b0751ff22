"""pass@k evaluation."""

from __future__ import annotations

from fractions import Fraction
from math import comb
from typing import Sequence

import numpy as np

from hdpo.errors import InvalidInputError
from hdpo.policy import Policy, sample_batch
from hdpo.seeding import rollout_uniforms
from hdpo.tasks import TaskInstance, verify


def pass_at_k(n: int, c: int, k: int) -> float:
    """Unbiased estimate 1 - C(n-c, k) / C(n, k), evaluated as an exact rational."""
    if not 0 <= c <= n:
        raise InvalidInputError(f"need 0 <= c <= n, got c={c}, n={n}")
    if not 1 <= k <= n:
        raise InvalidInputError(f"need 1 <= k <= n, got k={k}, n={n}")
    if c == 0:
        return 0.0
    if n - c < k:
        return 1.0
    return float(1 - Fraction(comb(n - c, k), comb(n, k)))


def correct_counts(
    policy: Policy,
    tasks: Sequence[TaskInstance],
    n: int,
    temperature: float,
    max_len: int,
    seed: int,
) -> np.ndarray:
    """Correct samples per task; sample j of task i always uses the same stream."""
    prompts = [t.context() for t in tasks for _ in range(n)]
    uniforms = np.concatenate([rollout_uniforms(seed, "eval", n, max_len, i) for i in range(len(tasks))])
    trajs = sample_batch(policy, prompts, max_len, temperature, uniforms)
    rewards = np.array([verify(tasks[i // n], tr.tokens) for i, tr in enumerate(trajs)])
    return rewards.reshape(len(tasks), n).sum(axis=1)


def evaluate(
    policy: Policy,
    tasks: Sequence[TaskInstance],
    n: int,
    k_list: Sequence[int],
    temperature: float = 1.0,
    max_len: int = 12,
    seed: int = 0,
) -> dict[int, float]:
    if not tasks:
        raise InvalidInputError("empty validation set")
    if n < max(k_list):
        raise InvalidInputError("samples per prompt must be >= max(k_list)")
    counts = correct_counts(policy, tasks, n, temperature, max_len, seed)
    return {int(k): float(np.mean([pass_at_k(n, int(c), int(k)) for c in counts])) for k in k_list}
