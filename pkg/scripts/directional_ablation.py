"""GRPO vs HDPO λ sweep across seeds; prints per-arm pass@k and the seed-wise verdict.

    python3 scripts/directional_ablation.py --config configs/directional.yaml --out-dir runs/ablation
"""

import argparse
import dataclasses
import json
import time
from pathlib import Path

from hdpo.runner.ablation import directional_verdict, run_sweep
from hdpo.runner.config import load_config


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--config", default="configs/directional.yaml")
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ap.add_argument("--lams", type=float, nargs="+", default=[0.0, 0.01, 0.1])
    ap.add_argument("--out-dir", default=None, help="keep per-arm metrics and checkpoints here")
    ap.add_argument("overrides", nargs="*")
    args = ap.parse_args()

    cfg = load_config(args.config, args.overrides)
    t0 = time.perf_counter()
    results = run_sweep(cfg, args.seeds, args.lams, out_dir=args.out_dir)
    summary = {"seconds": round(time.perf_counter() - t0, 1), "arms": [dataclasses.asdict(r) for r in results]}
    if {0.0, 0.01, 0.1} <= set(args.lams):
        summary["verdict"] = directional_verdict(results)
        print(json.dumps(summary["verdict"]))
    if args.out_dir:
        Path(args.out_dir).mkdir(parents=True, exist_ok=True)
        (Path(args.out_dir) / "summary.json").write_text(json.dumps(summary, indent=2))
    print(f"{summary['seconds']}s")


if __name__ == "__main__":
    main()
