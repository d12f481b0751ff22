"""Group rollouts, group-relative advantages, and the token-level clipped surrogate."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from hdpo.errors import InvalidInputError, NumericError
from hdpo.numerics import log_softmax_rows
from hdpo.policy import LogitLoss, Policy, Trajectory, sample_batch
from hdpo.tasks import TaskInstance, verify

ADVANTAGE_MODES = ("loo", "loo_scaled", "mean_std")


@dataclass(frozen=True)
class ClipConfig:
    epsilon: float = 0.2
    mode: str = "loo"
    std_floor: float = 1e-6

    def __post_init__(self) -> None:
        if not 0 < self.epsilon < 1:
            raise InvalidInputError("epsilon must lie in (0, 1)")
        if self.mode not in ADVANTAGE_MODES:
            raise InvalidInputError(f"unknown advantage mode {self.mode!r}")


@dataclass
class RolloutGroup:
    task: TaskInstance
    trajectories: list[Trajectory]
    rewards: np.ndarray
    advantages: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def old_logprobs(self) -> list[np.ndarray]:
        return [tr.logprobs for tr in self.trajectories]

    @property
    def size(self) -> int:
        return len(self.trajectories)


def compute_advantages(rewards, mode: str = "loo", std_floor: float = 1e-6) -> np.ndarray:
    r = np.asarray(rewards, dtype=np.float64)
    g = r.size
    if g < 2:
        raise InvalidInputError("need at least two rewards per group")
    if np.all(r == r[0]):
        return np.zeros(g)
    if mode in ("loo", "loo_scaled"):
        adv = r - (r.sum() - r) / (g - 1)
        return adv * g / (g - 1) if mode == "loo_scaled" else adv
    if mode == "mean_std":
        return (r - r.mean()) / max(float(r.std()), std_floor)
    raise InvalidInputError(f"unknown advantage mode {mode!r}")


def score_group(task: TaskInstance, trajs: Sequence[Trajectory], cfg: ClipConfig = ClipConfig()) -> RolloutGroup:
    scored = [replace(tr, reward=verify(task, tr.tokens)) for tr in trajs]
    rewards = np.array([tr.reward for tr in scored], dtype=np.int64)
    return RolloutGroup(task, scored, rewards, compute_advantages(rewards, cfg.mode, cfg.std_floor))


def generate_groups(
    policy: Policy,
    tasks: Sequence[TaskInstance],
    group_size: int,
    temperature: float,
    max_len: int,
    uniforms: np.ndarray,
    cfg: ClipConfig = ClipConfig(),
) -> list[RolloutGroup]:
    """Sample ``group_size`` rollouts per task in one batch.

    ``uniforms`` has shape (len(tasks), group_size, >= max_len).
    """
    if group_size < 2:
        raise InvalidInputError("group size must be >= 2")
    prompts = [t.context() for t in tasks for _ in range(group_size)]
    trajs = sample_batch(policy, prompts, max_len, temperature, uniforms.reshape(len(prompts), -1))
    return [
        score_group(task, trajs[i * group_size:(i + 1) * group_size], cfg) for i, task in enumerate(tasks)
    ]


def generate_group(
    policy: Policy,
    task: TaskInstance,
    group_size: int,
    temperature: float,
    rng: np.random.Generator,
    max_len: int,
    cfg: ClipConfig = ClipConfig(),
) -> RolloutGroup:
    if group_size < 2:
        raise InvalidInputError("group size must be >= 2")
    u = rng.random((1, group_size, max_len))
    return generate_groups(policy, [task], group_size, temperature, max_len, u, cfg)[0]


def is_cliff(group: RolloutGroup) -> bool:
    return float(np.sum(group.rewards)) == 0.0


@dataclass
class SurrogateDiagnostics:
    ratios: np.ndarray
    clipped: np.ndarray
    n_tokens: int

    @property
    def clip_fraction(self) -> float:
        return float(self.clipped.mean()) if self.n_tokens else 0.0


def grpo_loss(
    groups: Sequence[RolloutGroup], policy: Policy, cfg: ClipConfig = ClipConfig()
) -> tuple[LogitLoss, SurrogateDiagnostics]:
    """Token-level mean of -min(rho*A, clip(rho, 1-eps, 1+eps)*A) over every token.

    The returned :class:`LogitLoss` carries dL/dlogits; where the clipped
    branch is selected the gradient is zero.
    """
    seqs, targets, old, adv, where = [], [], [], [], []
    for gi, grp in enumerate(groups):
        for ti, (tr, a) in enumerate(zip(grp.trajectories, grp.advantages)):
            seqs.extend(tr.contexts())
            targets.extend(tr.tokens)
            old.extend(tr.logprobs)
            adv.extend([a] * len(tr))
            where.extend((gi, ti, k) for k in range(len(tr)))
    n = len(seqs)
    if n == 0:
        return LogitLoss.zero(policy.vocab_size), SurrogateDiagnostics(np.zeros(0), np.zeros(0, bool), 0)
    old = np.asarray(old)
    adv = np.asarray(adv, dtype=np.float64)
    rows = np.arange(n)
    logp = log_softmax_rows(policy.logits_batch(seqs))
    new = logp[rows, targets]
    ratio = np.exp(new - old)
    bad = ~np.isfinite(ratio)
    if bad.any():
        raise NumericError("non-finite importance ratio", where[int(np.argmax(bad))])
    eps = cfg.epsilon
    unclipped = ratio * adv
    clipped = np.clip(ratio, 1 - eps, 1 + eps) * adv
    use_clipped = clipped < unclipped
    value = -float(np.mean(np.minimum(unclipped, clipped)))
    # d(-rho*A/n)/d new_logprob = -A*rho/n on the unclipped branch
    coef = np.where(use_clipped, 0.0, -adv * ratio / n)
    dz = -np.exp(logp) * coef[:, None]
    dz[rows, targets] += coef
    return LogitLoss(value, seqs, dz, n), SurrogateDiagnostics(ratio, use_clipped, n)
