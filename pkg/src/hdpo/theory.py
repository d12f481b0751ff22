"""Executable checks of the Gibbs-optimum and realizability-gap results.

The Gibbs checks run on tabular policies small enough to enumerate every
completion, so all distributions are exact. Reward functions map a
completion (generated tokens, EOS included) to 0 or 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import partial
from typing import Callable, Sequence

import numpy as np

from hdpo import vocab
from hdpo.errors import DegenerateConditionalError, InvalidInputError
from hdpo.numerics import kl_divergence, lemma1_bound_holds, log_softmax_rows, softmax, total_variation
from hdpo.policy import Context, Policy, TabularPolicy, Tokens, sample_batch
from hdpo.tasks import verify

RewardFn = Callable[[Tokens], int]
MAX_ENUMERATION = 10**6


def enumerate_completions(
    policy: Policy, prompt: Sequence[int], max_len: int, eos: int = vocab.EOS
) -> tuple[list[Tokens], np.ndarray]:
    """Every completion with its exact probability; EOS and max_len terminate."""
    if policy.vocab_size ** max_len > MAX_ENUMERATION:
        raise InvalidInputError(f"|V|^L = {policy.vocab_size}^{max_len} exceeds {MAX_ENUMERATION}")
    prompt = tuple(prompt)
    done: list[Tokens] = []
    done_p: list[float] = []
    frontier: list[Tokens] = [()]
    frontier_p = np.array([1.0])
    for depth in range(max_len):
        if not frontier:
            break
        probs = np.exp(log_softmax_rows(policy.logits_batch([prompt + f for f in frontier])))
        nxt, nxt_p = [], []
        for f, pf, row in zip(frontier, frontier_p, probs):
            for v in range(policy.vocab_size):
                seq = f + (v,)
                if v == eos or depth == max_len - 1:
                    done.append(seq)
                    done_p.append(pf * row[v])
                else:
                    nxt.append(seq)
                    nxt_p.append(pf * row[v])
        frontier, frontier_p = nxt, np.array(nxt_p)
    return done, np.array(done_p)


@dataclass(frozen=True)
class EnumerableSpace:
    """A policy, a prompt and a reward over every completion up to ``max_len``."""

    policy: Policy
    prompt: Tokens
    reward_fn: RewardFn
    max_len: int
    eos: int = vocab.EOS

    @classmethod
    def for_task(cls, policy: Policy, task, max_len: int) -> "EnumerableSpace":
        return cls(policy, tuple(task.prompt), partial(verify, task), max_len)

    def enumerate(self) -> tuple[list[Tokens], np.ndarray, np.ndarray]:
        trajs, ref_p = enumerate_completions(self.policy, self.prompt, self.max_len, self.eos)
        rewards = np.array([int(self.reward_fn(t)) for t in trajs], dtype=np.int64)
        return trajs, ref_p, rewards


@dataclass
class GibbsPolicy:
    trajectories: list[Tokens]
    ref_probs: np.ndarray
    rewards: np.ndarray
    beta: float
    log_partition: float
    probs: np.ndarray

    @property
    def success_prob(self) -> float:
        return float(self.ref_probs[self.rewards == 1].sum())

    @property
    def partition(self) -> float:
        return math.exp(self.log_partition)

    def closed_form_partition(self) -> float:
        p = self.success_prob
        return (1 - p) + p * math.exp(1.0 / self.beta)


def _space(space: EnumerableSpace):
    trajs, ref_p, rewards = space.enumerate()
    if ref_p[rewards == 1].sum() <= 0:
        raise DegenerateConditionalError("no reference mass on correct trajectories (p = 0)")
    return trajs, ref_p, rewards


def _gibbs_from_space(trajs, ref_p, rewards, beta: float) -> GibbsPolicy:
    if not beta > 0:
        raise InvalidInputError("beta must be positive")
    with np.errstate(divide="ignore"):
        log_w = np.log(ref_p) + rewards / beta
    top = np.max(log_w)
    log_z = top + math.log(float(np.sum(np.exp(log_w - top))))
    return GibbsPolicy(trajs, ref_p, rewards, beta, log_z, np.exp(log_w - log_z))


def build_gibbs(space: EnumerableSpace, beta: float) -> GibbsPolicy:
    """pi*(tau) = pi_ref(tau) exp(R(tau)/beta) / Z(beta), by enumeration."""
    return _gibbs_from_space(*_space(space), beta)


def conditional_from_space(ref_p: np.ndarray, rewards: np.ndarray) -> np.ndarray:
    mask = rewards == 1
    p = ref_p[mask].sum()
    if p <= 0:
        raise DegenerateConditionalError("no reference mass on correct trajectories (p = 0)")
    return np.where(mask, ref_p, 0.0) / p


def conditional_policy(space: EnumerableSpace) -> tuple[list[Tokens], np.ndarray]:
    trajs, ref_p, rewards = _space(space)
    return trajs, conditional_from_space(ref_p, rewards)


def hard_threshold_limit_check(space: EnumerableSpace, betas: Sequence[float]) -> list[float]:
    """TV(Gibbs(beta), pi_ref(.|R=1)) for each beta, in the given order."""
    trajs, ref_p, rewards = _space(space)
    cond = conditional_from_space(ref_p, rewards)
    return [total_variation(_gibbs_from_space(trajs, ref_p, rewards, b).probs, cond) for b in betas]


@dataclass
class RejectionReport:
    n_samples: int
    n_accepted: int
    success_prob: float
    tv: float | None

    @property
    def acceptance_rate(self) -> float:
        return self.n_accepted / self.n_samples

    @property
    def binomial_sigma(self) -> float:
        p = self.success_prob
        return math.sqrt(p * (1 - p) / self.n_samples)

    @property
    def inconclusive(self) -> bool:
        return self.n_accepted == 0

    def acceptance_within(self, n_sigma: float = 3.0) -> bool:
        return abs(self.acceptance_rate - self.success_prob) <= n_sigma * self.binomial_sigma


def rejection_sampling_check(space: EnumerableSpace, n_samples: int, rng: np.random.Generator) -> RejectionReport:
    """Sample from the reference policy, keep R=1, compare with the exact conditional."""
    trajs, ref_p, rewards = _space(space)
    cond = conditional_from_space(ref_p, rewards)
    index = {t: i for i, t in enumerate(trajs)}
    u = rng.random((n_samples, space.max_len))
    samples = sample_batch(space.policy, [Context(space.prompt)] * n_samples, space.max_len, 1.0, u, eos=space.eos)
    counts = np.zeros(len(trajs))
    accepted = 0
    for s in samples:
        if space.reward_fn(s.tokens) == 1:
            counts[index[s.tokens]] += 1
            accepted += 1
    p = float(ref_p[rewards == 1].sum())
    if accepted == 0:
        return RejectionReport(n_samples, 0, p, None)
    return RejectionReport(n_samples, accepted, p, total_variation(counts / accepted, cond))


def random_tabular_space(
    rng: np.random.Generator,
    vocab_size: int = 4,
    max_len: int = 3,
    p_range: tuple[float, float] = (0.05, 0.9),
    logit_scale: float = 1.5,
    target_p: float | None = None,
    max_tries: int = 100,
) -> EnumerableSpace:
    """Random full-context tabular policy with a random correct set.

    The last token id is EOS. With ``target_p`` the correct set is grown in
    random order until its reference mass first reaches the target.
    """
    eos = vocab_size - 1
    prompt = (0,)
    for _ in range(max_tries):
        policy = TabularPolicy(vocab_size, None)
        frontier: list[Tokens] = [()]
        for depth in range(max_len):
            nxt = []
            for f in frontier:
                policy.set_row(prompt + f, rng.normal(0.0, logit_scale, vocab_size))
                if depth < max_len - 1:
                    nxt.extend(f + (v,) for v in range(vocab_size) if v != eos)
            frontier = nxt
        trajs, ref_p = enumerate_completions(policy, prompt, max_len, eos)
        if target_p is None:
            correct = {t for t in trajs if rng.random() < rng.uniform(0.1, 0.8)}
        else:
            correct, mass = set(), 0.0
            for i in rng.permutation(len(trajs)):
                if mass >= target_p:
                    break
                correct.add(trajs[i])
                mass += ref_p[i]
        p = float(sum(pr for t, pr in zip(trajs, ref_p) if t in correct))
        if p_range[0] <= p <= p_range[1]:
            return EnumerableSpace(policy, prompt, _member_of(frozenset(correct)), max_len, eos)
    raise RuntimeError("could not draw a space with p in range")


class _member_of:
    def __init__(self, correct: frozenset) -> None:
        self.correct = correct

    def __call__(self, tokens: Tokens) -> int:
        return int(tuple(tokens) in self.correct)


def _max_abs_exact(a: Sequence[float], b: Sequence[float]) -> Fraction:
    return max(abs(Fraction(float(x)) - Fraction(float(y))) for x, y in zip(a, b))


@dataclass
class GapRecord:
    position: int
    same_model_gap: float
    same_model_kl: float
    mismatch_gap: float
    cross_model_gap: float
    cross_model_kl: float
    privileged_block_size: int
    triangle_holds: bool
    lemma1_same_holds: bool
    lemma1_cross_holds: bool


@dataclass
class GapReport:
    records: list[GapRecord] = field(default_factory=list)

    @property
    def all_hold(self) -> bool:
        return all(r.triangle_holds and r.lemma1_same_holds and r.lemma1_cross_holds for r in self.records)


def measure_realizability_gap(
    theta: Policy,
    phi: Policy | None,
    prompt: Sequence[int],
    privileged: Sequence[int],
    completion: Sequence[int],
    positions: Sequence[int] | None = None,
) -> GapReport:
    """Logit gaps and KLs between privileged and plain contexts along ``completion``.

    With ``phi=None`` the cross-model teacher is ``theta`` itself, the
    drifting-teacher case. Triangle checks use exact rational arithmetic on
    the float logits.
    """
    phi = theta if phi is None else phi
    completion = tuple(completion)
    positions = range(len(completion)) if positions is None else positions
    priv_ctx = Context(tuple(prompt), tuple(privileged) if privileged else None)
    plain_ctx = Context(tuple(prompt))
    t_seqs = [priv_ctx.tokens + completion[:t] for t in positions]
    s_seqs = [plain_ctx.tokens + completion[:t] for t in positions]
    z_t = theta.logits_batch(t_seqs)
    z_s = theta.logits_batch(s_seqs)
    z_phi = phi.logits_batch(t_seqs)
    block = len(priv_ctx.tokens) - len(plain_ctx.tokens)
    report = GapReport()
    for i, pos in enumerate(positions):
        same = _max_abs_exact(z_t[i], z_s[i])
        mismatch = _max_abs_exact(z_phi[i], z_t[i])
        cross = _max_abs_exact(z_phi[i], z_s[i])
        p_t, p_s, p_phi = softmax(z_t[i]), softmax(z_s[i]), softmax(z_phi[i])
        kl_same = kl_divergence(p_t, p_s)
        kl_cross = kl_divergence(p_phi, p_s)
        report.records.append(
            GapRecord(
                position=int(pos),
                same_model_gap=float(same),
                same_model_kl=kl_same,
                mismatch_gap=float(mismatch),
                cross_model_gap=float(cross),
                cross_model_kl=kl_cross,
                privileged_block_size=block,
                triangle_holds=cross <= mismatch + same,
                lemma1_same_holds=kl_same <= float(same) ** 2 / 2 + 1e-12,
                lemma1_cross_holds=kl_cross <= float(cross) ** 2 / 2 + 1e-12,
            )
        )
    return report


@dataclass
class Lemma1Audit:
    trials: int
    violations: int
    max_ratio: float


def lemma1_audit(
    trials: int,
    rng: np.random.Generator,
    vocab_sizes: Sequence[int] = (2, 8, 64),
    scale: float = 5.0,
    adversarial_fraction: float = 0.25,
) -> Lemma1Audit:
    """Random (z, delta) pairs with entries in [-scale, scale].

    A share of trials uses delta = c * sign(z - E_P[z]), which tilts the
    distribution as hard as the max-norm allows.
    """
    if trials < 1:
        raise InvalidInputError("trials must be >= 1")
    violations, max_ratio = 0, 0.0
    for i in range(trials):
        v = int(vocab_sizes[i % len(vocab_sizes)])
        z = rng.uniform(-scale, scale, v)
        if rng.random() < adversarial_fraction:
            p = softmax(z)
            delta = rng.uniform(0, scale) * np.sign(z - p @ z)
        else:
            delta = rng.uniform(-scale, scale, v)
        kl, bound, holds = lemma1_bound_holds(z, delta)
        violations += not holds
        if bound > 0:
            max_ratio = max(max_ratio, kl / bound)
    return Lemma1Audit(trials, violations, max_ratio)
