"""Seconds-scale end-to-end run: train the smoke config, export plot data, run the theory checks."""

import sys
from pathlib import Path

from hdpo.runner import cli

out = Path(sys.argv[1] if len(sys.argv) > 1 else "runs/smoke")
steps = [
    ["train", "--config", "configs/smoke.yaml", "--out-dir", str(out)],
    ["export-plotdata", "--metrics", str(out / "metrics.jsonl"), "--out-dir", str(out / "plotdata")],
    ["verify-theory", "--trials", "2000", "--out-dir", str(out)],
]
for argv in steps:
    code = cli.main(argv)
    if code:
        sys.exit(code)
