"""Command-line entry point.

    hdpo train --config configs/smoke.yaml hdpo.lam=0.1 --out-dir runs/smoke
    hdpo eval --checkpoint runs/smoke/final.npz --task-set valid.jsonl
    hdpo verify-theory --trials 10000 --seed 0
    hdpo export-plotdata --metrics runs/smoke/metrics.jsonl --out-dir runs/smoke/plot
    hdpo make-taskset --count 64 --difficulties 1 2 3 --out valid.jsonl
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from hdpo.errors import InvalidInputError


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, default=None, help="global seed (overrides the config)")
    p.add_argument("--out-dir", default=None, help="output directory")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="hdpo", description="GRPO with privileged self-distillation on cliff prompts")
    sub = parser.add_subparsers(dest="command", required=True)

    tr = sub.add_parser("train", parents=[common], help="run the training loop")
    tr.add_argument("--config", required=True, help="YAML experiment config")
    tr.add_argument("--resume", default=None, help="checkpoint to resume from")
    tr.add_argument("overrides", nargs="*", help="dotted key=value overrides, e.g. hdpo.lam=0.1")

    ev = sub.add_parser("eval", parents=[common], help="pass@k of a checkpoint on a task set")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--task-set", required=True)
    ev.add_argument("--samples", type=int, default=16)
    ev.add_argument("--k", type=int, nargs="+", default=[1, 4, 8])
    ev.add_argument("--max-len", type=int, default=None)
    ev.add_argument("--temperature", type=float, default=1.0)

    vt = sub.add_parser("verify-theory", parents=[common], help="run the executable theory checks")
    vt.add_argument("--trials", type=int, default=10_000)

    ex = sub.add_parser("export-plotdata", parents=[common], help="metrics stream to per-metric column files")
    ex.add_argument("--metrics", required=True)

    mk = sub.add_parser("make-taskset", parents=[common], help="write a frozen task-set file")
    mk.add_argument("--count", type=int, default=64)
    mk.add_argument("--families", nargs="+", default=["modular-chain", "copy-reverse"])
    mk.add_argument("--difficulties", type=int, nargs="+", default=[1, 2, 3, 4])
    mk.add_argument("--out", required=True)
    return parser


def _cmd_train(args) -> int:
    from hdpo.runner.config import load_config
    from hdpo.runner.train import train

    overrides = list(args.overrides)
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    if args.out_dir is not None:
        overrides.append(f"out_dir={args.out_dir}")
    cfg = load_config(args.config, overrides)
    result = train(cfg, out_dir=cfg.out_dir, resume=args.resume)
    last = {k: v for k, v in result.records[-1].items() if k.startswith("pass@")} if result.records else {}
    print(json.dumps({"out_dir": str(result.out_dir), "step": result.state.step, **last}))
    return 0


def _cmd_eval(args) -> int:
    from hdpo.runner.evaluate import evaluate
    from hdpo.runner.io import Checkpoint
    from hdpo.tasks import read_task_set

    ckpt = Checkpoint.load(args.checkpoint)
    tasks = read_task_set(args.task_set)
    max_len = args.max_len or ckpt.config.get("tasks", {}).get("max_len", 12)
    seed = args.seed if args.seed is not None else ckpt.config.get("seed", 0)
    scores = evaluate(ckpt.policy, tasks, args.samples, args.k, args.temperature, max_len, seed)
    report = {"checkpoint": str(args.checkpoint), "step": ckpt.step, **{f"pass@{k}": v for k, v in scores.items()}}
    print(json.dumps(report))
    if args.out_dir:
        Path(args.out_dir).mkdir(parents=True, exist_ok=True)
        (Path(args.out_dir) / "eval.json").write_text(json.dumps(report, indent=2))
    return 0


def _cmd_verify_theory(args) -> int:
    from hdpo.runner.report import theory_report

    records = theory_report(trials=args.trials, seed=0 if args.seed is None else args.seed)
    lines = [json.dumps(r) for r in records]
    print("\n".join(lines))
    if args.out_dir:
        Path(args.out_dir).mkdir(parents=True, exist_ok=True)
        (Path(args.out_dir) / "theory_report.jsonl").write_text("\n".join(lines) + "\n")
    return 0 if all(r["pass"] for r in records) else 1


def _cmd_export(args) -> int:
    from hdpo.runner.io import export_plotdata

    out = args.out_dir or str(Path(args.metrics).parent / "plotdata")
    for path in export_plotdata(args.metrics, out):
        print(path)
    return 0


def _cmd_make_taskset(args) -> int:
    import numpy as np

    from hdpo.tasks import sample_tasks, write_task_set

    rng = np.random.default_rng(0 if args.seed is None else args.seed)
    write_task_set(args.out, sample_tasks(args.families, args.difficulties, None, args.count, rng))
    print(args.out)
    return 0


COMMANDS = {
    "train": _cmd_train,
    "eval": _cmd_eval,
    "verify-theory": _cmd_verify_theory,
    "export-plotdata": _cmd_export,
    "make-taskset": _cmd_make_taskset,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except FileNotFoundError as exc:
        print(f"hdpo {args.command}: {exc}", file=sys.stderr)
        return 2
    except (InvalidInputError, ValueError) as exc:
        print(f"hdpo {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
