"""The training loop: GRPO on every prompt plus privileged distillation on cliffs."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from hdpo.distill import (
    DistillationSet,
    build_distillation_set,
    collect_cliffs,
    hdpo_step_loss,
    jsd_distill_loss,
    privileged_rollouts_batch,
)
from hdpo.errors import NumericError
from hdpo.grpo import ClipConfig, generate_groups, grpo_loss
from hdpo.policy import (
    AdamState,
    AdamWConfig,
    Policy,
    TabularPolicy,
    TinyNetPolicy,
    apply_update,
    cross_entropy_loss,
    grad_of_scalar_loss,
)
from hdpo.runner.config import ExperimentConfig, save_config
from hdpo.runner.evaluate import evaluate
from hdpo.runner.io import Checkpoint, MetricsWriter
from hdpo.seeding import rng_for, rollout_uniforms
from hdpo.tasks import TaskInstance, generate_task, privileged_prompt, read_task_set, sample_tasks

log = logging.getLogger(__name__)


def lr_at(step: int, cfg: ExperimentConfig) -> float:
    """Linear warmup from ``warmup_start * lr`` to ``lr``, then constant. ``step`` is 1-based."""
    o = cfg.optim
    if o.warmup_steps <= 0:
        return o.lr
    frac = min(1.0, (step - 1) / o.warmup_steps)
    return o.lr * (o.warmup_start + (1.0 - o.warmup_start) * frac)


def init_policy(cfg: ExperimentConfig) -> Policy:
    p = cfg.policy
    if p.backend == "tabular":
        return TabularPolicy(cfg.vocab_size, p.window)
    if p.backend != "tiny-net":
        raise ValueError(f"unknown policy backend {p.backend!r}")
    return TinyNetPolicy.init(
        rng_for(cfg.seed, "init"), cfg.vocab_size, p.window, p.embed_dim, p.hidden, p.init_scale
    )


def _adamw(cfg: ExperimentConfig) -> AdamWConfig:
    o = cfg.optim
    return AdamWConfig(o.beta1, o.beta2, o.eps, o.weight_decay)


def warmstart(policy: Policy, cfg: ExperimentConfig) -> Policy:
    """Cross-entropy on reference completions, half with the privileged block shown.

    Teaches the base skills a pretrained model would bring: the answer format,
    reading the privileged block, and the easy difficulty levels.
    """
    ws = cfg.warmstart
    if ws.steps <= 0:
        return policy
    state = AdamState()
    fams = cfg.tasks.families
    for step in range(ws.steps):
        rng = rng_for(cfg.seed, "warmstart", step)
        seqs, targets = [], []
        halves = [(ws.privileged_difficulties, True), (ws.plain_difficulties, False)]
        halves = [h for h in halves if h[0]]
        for diffs, privileged in halves:
            for task in sample_tasks(fams, diffs, None, ws.batch_size // len(halves), rng):
                ctx = privileged_prompt(task) if privileged else task.context()
                completion = task.reference_completion()
                for t, tok in enumerate(completion):
                    seqs.append(ctx.tokens + completion[:t])
                    targets.append(tok)
        loss = cross_entropy_loss(policy, seqs, targets)
        grad = grad_of_scalar_loss(policy, loss)
        policy, state = apply_update(policy, grad, state, ws.lr, cfg.optim.max_grad_norm, _adamw(cfg))
    return policy


def validation_set(cfg: ExperimentConfig) -> list[TaskInstance]:
    t = cfg.tasks
    if t.valid_path:
        return read_task_set(t.valid_path)
    diffs = t.valid_difficulties or t.difficulties
    rng = rng_for(cfg.seed, "valid")
    out = []
    for i in range(t.valid_prompts):
        fam = t.families[i % len(t.families)]
        out.append(generate_task(fam, int(diffs[(i // len(t.families)) % len(diffs)]), int(rng.integers(2**31 - 1))))
    return out


@dataclass
class TrainState:
    step: int
    policy: Policy
    optimizer: AdamState
    teacher: Policy | None
    best: dict = field(default_factory=dict)


@dataclass
class StepOutput:
    state: TrainState
    record: dict
    distill_set: DistillationSet


def train_step(state: TrainState, cfg: ExperimentConfig) -> StepOutput:
    step = state.step + 1
    t0 = time.perf_counter()
    g, h, tc = cfg.grpo, cfg.hdpo, cfg.tasks
    clip = ClipConfig(g.epsilon, g.advantage_mode, g.std_floor)
    policy = state.policy

    tasks = sample_tasks(tc.families, tc.difficulties, tc.weights, tc.prompts_per_step, rng_for(cfg.seed, "batch", step))
    uniforms = np.stack([rollout_uniforms(cfg.seed, "rollout", g.group_size, tc.max_len, step, i) for i in range(len(tasks))])
    groups = generate_groups(policy, tasks, g.group_size, g.temperature, tc.max_len, uniforms, clip)
    n_cliff_total = sum(int(grp.rewards.sum() == 0) for grp in groups)

    dset = DistillationSet()
    priv_pass = float("nan")
    teacher = None
    # lam = 0 skips the block entirely so the run is GRPO bit for bit
    if h.teacher != "none" and h.lam > 0:
        teacher = policy if h.teacher == "drifting" else state.teacher
        cliffs = collect_cliffs(groups, h.max_cliff_prompts)
        if cliffs:
            pu = np.stack(
                [rollout_uniforms(cfg.seed, "privileged", h.rollouts_per_cliff, tc.max_len, step, i) for i in range(len(cliffs))]
            )
            rollouts = privileged_rollouts_batch(teacher, cliffs, h.rollouts_per_cliff, h.temperature, tc.max_len, pu)
            priv_pass = float(np.mean([tr.reward for trs in rollouts for tr in trs]))
            dset = build_distillation_set(cliffs, rollouts, h.success_threshold)
            if not dset.entries:
                log.debug("step %d: %d cliffs but no privileged rollout passed", step, len(cliffs))

    opt = state.optimizer
    loss_grpo = loss_jsd = 0.0
    grad_norm = 0.0
    for _ in range(g.inner_epochs):
        gl, diag = grpo_loss(groups, policy, clip)
        grad = grad_of_scalar_loss(policy, gl)
        loss_grpo = gl.value
        loss_jsd = 0.0
        if dset.entries:
            dl = jsd_distill_loss(dset, teacher, policy, h.top_k)
            loss_jsd = dl.value
            grad = grad + grad_of_scalar_loss(policy, dl).scaled(h.lam)
        grad_norm = grad.global_norm()
        policy, opt = apply_update(policy, grad, opt, lr_at(step, cfg), cfg.optim.max_grad_norm, _adamw(cfg))

    rewards = np.concatenate([grp.rewards for grp in groups])
    record = {
        "step": step,
        "mean_reward": float(rewards.mean()),
        "cliff_fraction": n_cliff_total / len(groups),
        "n_cliffs": n_cliff_total,
        "n_distill": len(dset),
        "n_tok": dset.n_tok,
        "privileged_pass_rate": None if np.isnan(priv_pass) else priv_pass,
        "loss_grpo": loss_grpo,
        "loss_jsd": loss_jsd,
        "loss_hdpo": hdpo_step_loss(loss_grpo, loss_jsd, h.lam),
        "grad_norm": grad_norm,
        "clip_fraction": diag.clip_fraction,
        "lr": lr_at(step, cfg),
        "wall_time": time.perf_counter() - t0,
    }
    return StepOutput(TrainState(step, policy, opt, state.teacher, dict(state.best)), record, dset)


def run_eval(state: TrainState, cfg: ExperimentConfig, valid: list[TaskInstance]) -> dict:
    s = cfg.schedule
    scores = evaluate(state.policy, valid, s.eval_samples, s.k_list, cfg.grpo.temperature, cfg.tasks.max_len, cfg.seed)
    out = {}
    for k, v in scores.items():
        out[f"pass@{k}"] = v
        state.best[f"pass@{k}"] = max(v, state.best.get(f"pass@{k}", 0.0))
        out[f"best_pass@{k}"] = state.best[f"pass@{k}"]
    return out


def initial_state(cfg: ExperimentConfig, base: Policy | None = None) -> TrainState:
    """Fresh state; ``base`` skips init and warm-start (shared across ablation arms)."""
    policy = warmstart(init_policy(cfg), cfg) if base is None else base
    teacher = policy.copy() if cfg.hdpo.teacher == "frozen" else None
    return TrainState(0, policy, AdamState(), teacher)


def checkpoint_of(state: TrainState, cfg: ExperimentConfig) -> Checkpoint:
    return Checkpoint(
        state.step, state.policy, state.optimizer, state.teacher, cfg.hash(), cfg.to_dict(), {"best": state.best}
    )


def state_from_checkpoint(ckpt: Checkpoint, cfg: ExperimentConfig) -> TrainState:
    if ckpt.config_hash != cfg.hash():
        raise ValueError(f"checkpoint config hash {ckpt.config_hash} does not match {cfg.hash()}")
    return TrainState(ckpt.step, ckpt.policy, ckpt.optimizer, ckpt.teacher, dict(ckpt.extra.get("best", {})))


@dataclass
class TrainResult:
    state: TrainState
    records: list[dict]
    out_dir: Path | None


def train(
    cfg: ExperimentConfig,
    out_dir: str | Path | None = None,
    resume: str | Path | None = None,
    stop_at: int | None = None,
    initial: TrainState | None = None,
) -> TrainResult:
    """Run the loop to ``schedule.steps`` (or ``stop_at``), evaluating periodically.

    With ``out_dir`` set, metrics go to ``metrics.jsonl`` and checkpoints to
    ``checkpoints/``; the final state is always written to ``final.npz``.
    """
    total = cfg.schedule.steps if stop_at is None else stop_at
    valid = validation_set(cfg)
    if resume is not None:
        state = state_from_checkpoint(Checkpoint.load(resume), cfg)
    elif initial is not None:
        state = TrainState(initial.step, initial.policy, initial.optimizer, initial.teacher, dict(initial.best))
    else:
        state = initial_state(cfg)

    writer = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        save_config(cfg, out_dir / "config.yaml")
        writer = MetricsWriter(out_dir / "metrics.jsonl", append=resume is not None)

    records: list[dict] = []

    def emit(rec: dict) -> None:
        records.append(rec)
        if writer is not None:
            writer.write(rec)

    try:
        if state.step == 0:
            emit({"step": 0, **run_eval(state, cfg, valid)})
        every = cfg.schedule.eval_every
        while state.step < total:
            try:
                out = train_step(state, cfg)
            except NumericError as exc:
                raise NumericError(f"training step {state.step + 1}: {exc}", ("step", state.step + 1, *exc.location)) from exc
            state = out.state
            rec = out.record
            if (every and state.step % every == 0) or state.step == total:
                rec.update(run_eval(state, cfg, valid))
            emit(rec)
            ck = cfg.schedule.checkpoint_every
            if out_dir is not None and ck and state.step % ck == 0:
                checkpoint_of(state, cfg).save(out_dir / "checkpoints" / f"step_{state.step:06d}.npz")
    finally:
        if writer is not None:
            writer.close()
    if out_dir is not None:
        checkpoint_of(state, cfg).save(out_dir / "final.npz")
    return TrainResult(state, records, out_dir)
