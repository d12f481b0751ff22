"""Privileged self-distillation on cliff prompts.

A cliff is a prompt whose whole rollout group scored zero. For each cliff the
teacher (the same network, or a frozen copy of it) generates rollouts with the
ground-truth trace spliced into its context; rollouts that pass the verifier
form the distillation set, and the student is pulled toward the teacher's
top-k next-token distribution along those rollouts with a JSD loss
normalized by the global distillation token count.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from hdpo.errors import InvalidInputError
from hdpo.grpo import RolloutGroup, is_cliff
from hdpo.numerics import TopKDistribution, jsd_topk_grad_logits, softmax, softmax_rows
from hdpo.policy import Context, LogitLoss, Policy, Trajectory, logits, sample_batch
from hdpo.tasks import TaskInstance, privileged_prompt, verify

TEACHER_MODES = ("none", "frozen", "drifting")


@dataclass(frozen=True)
class DistillConfig:
    lam: float = 0.0
    teacher_mode: str = "drifting"
    top_k: int = 64
    max_cliff_prompts: int = 32
    rollouts_per_cliff: int = 4
    success_threshold: float = 1.0

    def __post_init__(self) -> None:
        if self.lam < 0:
            raise InvalidInputError("lambda must be non-negative")
        if self.top_k < 1:
            raise InvalidInputError("top_k must be >= 1")
        if self.teacher_mode not in TEACHER_MODES:
            raise InvalidInputError(f"unknown teacher mode {self.teacher_mode!r}")
        if self.rollouts_per_cliff < 1:
            raise InvalidInputError("rollouts_per_cliff must be >= 1")


@dataclass
class DistillationSet:
    entries: list[tuple[TaskInstance, Trajectory]] = field(default_factory=list)

    @property
    def n_tok(self) -> int:
        return sum(len(tr) for _, tr in self.entries)

    def __len__(self) -> int:
        return len(self.entries)

    def partition(self, n_parts: int) -> list["DistillationSet"]:
        return [DistillationSet(self.entries[i::n_parts]) for i in range(n_parts)]


def collect_cliffs(groups: Sequence[RolloutGroup], cap: int) -> list[TaskInstance]:
    """Tasks of all-zero groups in batch order, truncated to ``cap``."""
    return [g.task for g in groups if is_cliff(g)][:cap]


def privileged_rollouts_batch(
    teacher: Policy,
    tasks: Sequence[TaskInstance],
    count: int,
    temperature: float,
    max_len: int,
    uniforms: np.ndarray,
) -> list[list[Trajectory]]:
    """``count`` rollouts per task from its privileged context, scored on the plain task.

    ``uniforms`` has shape (len(tasks), count, >= max_len).
    """
    if count < 1:
        raise InvalidInputError("count must be >= 1")
    if not tasks:
        return []
    prompts = [privileged_prompt(t) for t in tasks for _ in range(count)]
    trajs = sample_batch(teacher, prompts, max_len, temperature, uniforms.reshape(len(prompts), -1))
    out = []
    for i, task in enumerate(tasks):
        chunk = trajs[i * count:(i + 1) * count]
        out.append([replace(tr, reward=verify(task, tr.tokens)) for tr in chunk])
    return out


def privileged_rollouts(
    teacher: Policy,
    task: TaskInstance,
    count: int,
    temperature: float,
    rng: np.random.Generator,
    max_len: int,
) -> list[Trajectory]:
    if count < 1:
        raise InvalidInputError("count must be >= 1")
    u = rng.random((1, count, max_len))
    return privileged_rollouts_batch(teacher, [task], count, temperature, max_len, u)[0]


def filter_r1(rollouts: Sequence[Trajectory], task: TaskInstance, threshold: float = 1.0) -> list[Trajectory]:
    """Keep rollouts whose re-verified reward reaches ``threshold``."""
    return [tr for tr in rollouts if verify(task, tr.tokens) >= threshold]


def build_distillation_set(
    cliffs: Sequence[TaskInstance], rollouts: Sequence[Sequence[Trajectory]], threshold: float = 1.0
) -> DistillationSet:
    entries = []
    for task, trs in zip(cliffs, rollouts):
        entries.extend((task, tr) for tr in filter_r1(trs, task, threshold))
    return DistillationSet(entries)


def _topk_order(z: np.ndarray, k: int) -> np.ndarray:
    # stable sort on -z: ties resolved toward the lower token id
    return np.argsort(-z, axis=-1, kind="stable")[..., :k]


def teacher_topk(teacher: Policy, ctx: Context | Sequence[int], k: int) -> TopKDistribution:
    z = logits(teacher, ctx)
    if not 1 <= k <= z.size:
        raise InvalidInputError(f"k={k} outside [1, {z.size}]")
    support = _topk_order(z, k)
    return TopKDistribution.from_weights(support, softmax(z)[support])


def teacher_topk_dense(teacher: Policy, seqs: Sequence[Sequence[int]], k: int) -> np.ndarray:
    """Renormalized top-k teacher distributions as dense (B, V) rows."""
    z = teacher.logits_batch(seqs)
    k = min(k, z.shape[1])
    support = _topk_order(z, k)
    probs = softmax_rows(z)
    dense = np.zeros_like(probs)
    rows = np.arange(len(seqs))[:, None]
    dense[rows, support] = probs[rows, support]
    return dense / dense.sum(axis=1, keepdims=True)


def distill_contexts(dset: DistillationSet) -> tuple[list, list]:
    """Teacher (privileged) and student (plain) contexts for every distilled position."""
    teacher_seqs, student_seqs = [], []
    for task, tr in dset.entries:
        priv = privileged_prompt(task).tokens
        plain = task.prompt
        for t in range(len(tr)):
            teacher_seqs.append(priv + tr.tokens[:t])
            student_seqs.append(plain + tr.tokens[:t])
    return teacher_seqs, student_seqs


def jsd_distill_loss(
    dset: DistillationSet,
    teacher: Policy,
    student: Policy,
    top_k: int,
    n_tok: int | None = None,
) -> LogitLoss:
    """Sum of per-position top-k JSD divided by the global token count.

    ``n_tok`` defaults to ``dset.n_tok``; pass the global count when ``dset``
    is one shard of a larger set. The teacher enters only as a fixed target.
    """
    n_tok = dset.n_tok if n_tok is None else n_tok
    if len(dset) == 0 or n_tok <= 0:
        raise InvalidInputError("empty distillation set; skip the term instead")
    teacher_seqs, student_seqs = distill_contexts(dset)
    target = teacher_topk_dense(teacher, teacher_seqs, top_k)
    values, dz = jsd_topk_grad_logits(target, student.logits_batch(student_seqs))
    return LogitLoss(float(np.sum(values)) / n_tok, student_seqs, dz / n_tok, len(student_seqs))


def hdpo_step_loss(grpo_value: float, distill_value: float, lam: float) -> float:
    if lam == 0:
        return grpo_value
    return grpo_value + lam * distill_value
