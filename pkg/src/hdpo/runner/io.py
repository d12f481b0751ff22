"""Metrics stream, checkpoints, and plot-data export."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from hdpo.policy import AdamState, Policy, TabularPolicy, TinyNetPolicy

METRICS_SCHEMA = 1
CHECKPOINT_VERSION = 1


class MetricsWriter:
    """Append-only JSONL writer; the single writer of a run's metrics file."""

    def __init__(self, path: str | Path, append: bool = True) -> None:
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = open(self.path, "a" if append else "w")

    def write(self, record: dict) -> None:
        self._fh.write(json.dumps({"schema": METRICS_SCHEMA, **record}) + "\n")
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self) -> "MetricsWriter":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def write_metrics(path: str | Path, records: Iterable[dict], append: bool = False) -> None:
    with MetricsWriter(path, append=append) as w:
        for r in records:
            w.write(r)


def read_metrics(path: str | Path) -> list[dict]:
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{lineno}: malformed metrics line ({exc.msg})") from exc
            if not isinstance(rec, dict) or rec.get("schema") != METRICS_SCHEMA:
                raise ValueError(f"{path}:{lineno}: missing or unsupported schema version")
            out.append(rec)
    return out


def export_plotdata(metrics_path: str | Path, out_dir: str | Path) -> list[Path]:
    """One two-column ``step value`` TSV per numeric metric."""
    records = read_metrics(metrics_path)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    columns: dict[str, list[tuple[int, float]]] = {}
    for rec in records:
        for key, value in rec.items():
            if key in ("schema", "step") or isinstance(value, bool) or not isinstance(value, (int, float)):
                continue
            columns.setdefault(key, []).append((rec["step"], value))
    written = []
    for key, rows in columns.items():
        path = out_dir / f"{key.replace('@', '_at_')}.tsv"
        with open(path, "w") as fh:
            fh.write(f"step\t{key}\n")
            for step, value in rows:
                fh.write(f"{step}\t{value!r}\n")
        written.append(path)
    return written


def _key_str(key) -> str:
    return key if isinstance(key, str) else "T:" + ",".join(str(t) for t in key)


def _key_parse(s: str):
    if not s.startswith("T:"):
        return s
    body = s[2:]
    return tuple(int(t) for t in body.split(",")) if body else ()


def policy_meta(policy: Policy) -> dict:
    if isinstance(policy, TinyNetPolicy):
        return {
            "backend": policy.backend,
            "vocab_size": policy.vocab_size,
            "window": policy.window,
            "embed_dim": policy.embed_dim,
            "hidden": policy.hidden,
        }
    return {"backend": policy.backend, "vocab_size": policy.vocab_size, "window": policy.window}


def policy_from(meta: dict, params: dict) -> Policy:
    if meta["backend"] == "tiny-net":
        return TinyNetPolicy(meta["vocab_size"], meta["window"], meta["embed_dim"], meta["hidden"], params)
    return TabularPolicy(meta["vocab_size"], meta["window"], params)


@dataclass
class Checkpoint:
    step: int
    policy: Policy
    optimizer: AdamState
    teacher: Policy | None
    config_hash: str
    config: dict
    extra: dict = field(default_factory=dict)

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        arrays: dict[str, np.ndarray] = {}
        slots = {"policy": self.policy.params, "adam_m": self.optimizer.m, "adam_v": self.optimizer.v}
        if self.teacher is not None:
            slots["teacher"] = self.teacher.params
        names: dict[str, list[str]] = {}
        for slot, store in slots.items():
            names[slot] = []
            for i, (k, v) in enumerate(store.items()):
                arrays[f"{slot}/{i}"] = np.asarray(v, dtype=np.float64)
                names[slot].append(_key_str(k))
        meta = {
            "version": CHECKPOINT_VERSION,
            "step": self.step,
            "adam_step": self.optimizer.step,
            "policy": policy_meta(self.policy),
            "teacher": policy_meta(self.teacher) if self.teacher is not None else None,
            "names": names,
            "config_hash": self.config_hash,
            "config": self.config,
            "extra": self.extra,
        }
        arrays["meta"] = np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)
        with open(path, "wb") as fh:
            np.savez(fh, **arrays)
        return path

    @classmethod
    def load(cls, path: str | Path) -> "Checkpoint":
        with np.load(path) as data:
            meta = json.loads(bytes(data["meta"]).decode())
            if meta.get("version") != CHECKPOINT_VERSION:
                raise ValueError(f"{path}: unsupported checkpoint version {meta.get('version')}")
            stores = {
                slot: {_key_parse(name): data[f"{slot}/{i}"].copy() for i, name in enumerate(names)}
                for slot, names in meta["names"].items()
            }
        teacher = policy_from(meta["teacher"], stores["teacher"]) if meta["teacher"] else None
        return cls(
            step=meta["step"],
            policy=policy_from(meta["policy"], stores["policy"]),
            optimizer=AdamState(meta["adam_step"], stores["adam_m"], stores["adam_v"]),
            teacher=teacher,
            config_hash=meta["config_hash"],
            config=meta["config"],
            extra=meta.get("extra", {}),
        )
