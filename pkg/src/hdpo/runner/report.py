"""Structured report behind ``hdpo verify-theory``: one record per check."""

from __future__ import annotations

import time

import numpy as np

from hdpo.grpo import ClipConfig, RolloutGroup, compute_advantages, grpo_loss
from hdpo.numerics import TopKDistribution, jsd_exact, jsd_topk
from hdpo.policy import Context, TinyNetPolicy, grad_of_scalar_loss, sample_batch
from hdpo.tasks import generate_task
from hdpo.theory import (
    build_gibbs,
    hard_threshold_limit_check,
    lemma1_audit,
    measure_realizability_gap,
    random_tabular_space,
    rejection_sampling_check,
)

BETAS = (1.0, 0.3, 0.1, 0.03, 0.01)


def _timed(name: str, fn) -> dict:
    t0 = time.perf_counter()
    rec = fn()
    return {"name": name, **rec, "seconds": round(time.perf_counter() - t0, 3)}


def check_lemma1(trials: int, seed: int) -> dict:
    audit = lemma1_audit(trials, np.random.default_rng([seed, 1]))
    return {"trials": audit.trials, "violations": audit.violations, "max_ratio": audit.max_ratio,
            "pass": audit.violations == 0}


def check_gibbs(n_setups: int, seed: int) -> dict:
    rng = np.random.default_rng([seed, 2])
    worst_norm = worst_z = worst_final = 0.0
    monotone = True
    for i in range(n_setups):
        space = random_tabular_space(rng, vocab_size=3 + i % 3, max_len=3 + i % 2)
        for beta in BETAS:
            g = build_gibbs(space, beta)
            worst_norm = max(worst_norm, abs(float(g.probs.sum()) - 1.0))
            closed = g.closed_form_partition()
            worst_z = max(worst_z, abs(g.partition - closed) / closed)
        tvs = hard_threshold_limit_check(space, BETAS)
        monotone &= all(b <= a + 1e-12 for a, b in zip(tvs, tvs[1:]))
        worst_final = max(worst_final, tvs[-1])
    ok = worst_norm <= 1e-9 and worst_z <= 1e-9 and monotone and worst_final < 1e-9
    return {"setups": n_setups, "max_norm_error": worst_norm, "max_partition_rel_error": worst_z,
            "tv_monotone": monotone, "max_final_tv": worst_final, "pass": ok}


def check_rejection(n_samples: int, seed: int) -> dict:
    rng = np.random.default_rng([seed, 3])
    space = random_tabular_space(rng, vocab_size=3, max_len=3, target_p=0.25, p_range=(0.2, 0.3))
    rep = rejection_sampling_check(space, n_samples, rng)
    ok = rep.tv is not None and rep.tv < 0.02 and rep.acceptance_within(3.0)
    return {"samples": n_samples, "p": rep.success_prob, "acceptance_rate": rep.acceptance_rate,
            "tv": rep.tv, "pass": ok}


def check_triangle(n_triples: int, seed: int) -> dict:
    rng = np.random.default_rng([seed, 4])
    failures = positions = 0
    max_same_kl = 0.0
    for i in range(n_triples):
        theta = TinyNetPolicy.init(rng, window=8, embed_dim=8, hidden=16)
        phi = TinyNetPolicy.init(rng, window=8, embed_dim=8, hidden=16)
        task = generate_task(("modular-chain", "copy-reverse")[i % 2], 1 + i % 3, int(rng.integers(1 << 30)))
        rep = measure_realizability_gap(theta, phi, task.prompt, task.ground_truth, task.reference_completion())
        positions += len(rep.records)
        failures += sum(not (r.triangle_holds and r.lemma1_same_holds and r.lemma1_cross_holds) for r in rep.records)
        max_same_kl = max([max_same_kl] + [r.same_model_kl for r in rep.records])
    return {"triples": n_triples, "positions": positions, "failures": failures,
            "max_same_model_kl": max_same_kl, "pass": failures == 0}


def check_jsd(n_pairs: int, seed: int) -> dict:
    rng = np.random.default_rng([seed, 5])
    worst = 0.0
    for _ in range(n_pairs):
        v = int(rng.integers(2, 33))
        p, q = rng.dirichlet(np.ones(v)), rng.dirichlet(np.ones(v))
        worst = max(worst, abs(jsd_topk(TopKDistribution(tuple(range(v)), p), q) - jsd_exact(p, q)))
    return {"pairs": n_pairs, "max_abs_error": worst, "pass": worst <= 1e-10}


def check_cliff_gradient(n_groups: int, seed: int) -> dict:
    rng = np.random.default_rng([seed, 6])
    worst = 0.0
    for i in range(n_groups):
        policy = TinyNetPolicy.init(rng, window=8, embed_dim=8, hidden=16)
        task = generate_task("modular-chain", 1 + i % 3, i)
        trajs = sample_batch(policy, [Context(task.prompt)] * 4, 6, 1.0, rng.random((4, 6)))
        for mode in ("loo", "mean_std"):
            group = RolloutGroup(task, trajs, np.zeros(4, dtype=np.int64), compute_advantages(np.zeros(4), mode))
            loss, _ = grpo_loss([group], policy, ClipConfig(mode=mode))
            worst = max(worst, grad_of_scalar_loss(policy, loss).max_abs())
    return {"groups": n_groups, "max_abs_grad": worst, "pass": worst <= 1e-12}


def theory_report(trials: int = 10_000, seed: int = 0) -> list[dict]:
    """Run every check; ``trials`` drives the KL-bound audit and scales the others."""
    scale = max(1, trials // 10)
    return [
        _timed("lemma1_audit", lambda: check_lemma1(trials, seed)),
        _timed("gibbs_optimum", lambda: check_gibbs(20, seed)),
        _timed("rejection_sampling", lambda: check_rejection(100_000, seed)),
        _timed("triangle_decomposition", lambda: check_triangle(min(scale, 1000), seed)),
        _timed("jsd_topk_consistency", lambda: check_jsd(min(scale, 1000), seed)),
        _timed("cliff_zero_gradient", lambda: check_cliff_gradient(min(scale, 100), seed)),
    ]

