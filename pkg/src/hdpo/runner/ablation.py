"""Seeded λ sweep: GRPO against HDPO arms from one shared warm start per seed."""

from __future__ import annotations

import dataclasses
import time
from dataclasses import dataclass
from pathlib import Path

from hdpo.runner.config import ExperimentConfig
from hdpo.runner.train import initial_state, init_policy, train, warmstart


@dataclass
class ArmResult:
    seed: int
    lam: float
    teacher: str
    initial_cliff_fraction: float
    final: dict
    best: dict
    seconds: float


def arm_config(cfg: ExperimentConfig, seed: int, lam: float) -> ExperimentConfig:
    """λ = 0 is the plain GRPO baseline; λ > 0 keeps the configured teacher."""
    teacher = "none" if lam == 0 else (cfg.hdpo.teacher if cfg.hdpo.teacher != "none" else "drifting")
    return dataclasses.replace(
        cfg, seed=seed, hdpo=dataclasses.replace(cfg.hdpo, lam=lam, teacher=teacher)
    ).validate()


def run_sweep(
    cfg: ExperimentConfig,
    seeds: list[int],
    lams: list[float],
    out_dir: str | Path | None = None,
    log=print,
) -> list[ArmResult]:
    results = []
    for seed in seeds:
        base = warmstart(init_policy(arm_config(cfg, seed, 0.0)), arm_config(cfg, seed, 0.0))
        for lam in lams:
            arm = arm_config(cfg, seed, lam)
            t0 = time.perf_counter()
            sub = None if out_dir is None else Path(out_dir) / f"seed{seed}_lam{lam:g}"
            res = train(arm, out_dir=sub, initial=initial_state(arm, base.copy()))
            steps = [r for r in res.records if r["step"] >= 1]
            final = {k: v for k, v in res.records[-1].items() if k.startswith("pass@")}
            best = {k: v for k, v in res.records[-1].items() if k.startswith("best_pass@")}
            out = ArmResult(seed, lam, arm.hdpo.teacher, steps[0]["cliff_fraction"] if steps else float("nan"),
                            final, best, time.perf_counter() - t0)
            log(f"seed={seed} lam={lam:g} cliff0={out.initial_cliff_fraction:.2f} "
                + " ".join(f"{k}={v:.4f}" for k, v in final.items()) + f" ({out.seconds:.1f}s)")
            results.append(out)
    return results


def directional_verdict(results: list[ArmResult], k_hi: int = 8, k_lo: int = 1) -> dict:
    """Seed-wise comparisons: HDPO(0.1) vs GRPO on pass@k_hi; HDPO(0.1) vs HDPO(0.01) on pass@k_lo."""
    by = {(r.seed, r.lam): r for r in results}
    seeds = sorted({r.seed for r in results})
    hi, lo = f"pass@{k_hi}", f"pass@{k_lo}"
    wins = [by[s, 0.1].final[hi] > by[s, 0.0].final[hi] for s in seeds]
    tradeoff = [by[s, 0.1].final[lo] <= by[s, 0.01].final[lo] for s in seeds]
    cliff0 = [by[s, 0.0].initial_cliff_fraction for s in seeds]
    return {
        "seeds": seeds,
        "pass_hi_wins": sum(wins),
        "pass_lo_not_exceeding": sum(tradeoff),
        "min_initial_cliff_fraction": min(cliff0),
        "pass": sum(wins) >= 4 * len(seeds) / 5 and sum(tradeoff) > len(seeds) / 2 and min(cliff0) >= 0.2,
    }
