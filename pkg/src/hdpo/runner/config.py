"""Experiment configuration: nested dataclasses loaded from YAML."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from hdpo import vocab
from hdpo.errors import InvalidInputError


@dataclass
class PolicyConfig:
    backend: str = "tiny-net"
    window: int = 8
    embed_dim: int = 16
    hidden: int = 64
    init_scale: float = 1.0


@dataclass
class TaskConfig:
    families: list[str] = field(default_factory=lambda: ["modular-chain", "copy-reverse"])
    difficulties: list[int] = field(default_factory=lambda: [1, 2, 3, 4])
    weights: list[float] | None = None
    prompts_per_step: int = 16
    max_len: int = 12
    valid_prompts: int = 64
    valid_difficulties: list[int] | None = None
    valid_path: str | None = None


@dataclass
class GRPOBlock:
    group_size: int = 8
    temperature: float = 1.0
    epsilon: float = 0.2
    advantage_mode: str = "loo"
    std_floor: float = 1e-6
    inner_epochs: int = 1


@dataclass
class HDPOBlock:
    lam: float = 0.0
    teacher: str = "none"
    top_k: int = 64
    max_cliff_prompts: int = 32
    rollouts_per_cliff: int = 4
    success_threshold: float = 1.0
    temperature: float = 1.0


@dataclass
class OptimBlock:
    lr: float = 1e-3
    warmup_steps: int = 50
    warmup_start: float = 0.1
    weight_decay: float = 0.01
    max_grad_norm: float = 1.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class WarmstartBlock:
    """Supervised pre-training that stands in for a capable base model."""

    steps: int = 0
    batch_size: int = 64
    lr: float = 3e-3
    privileged_difficulties: list[int] = field(default_factory=list)
    plain_difficulties: list[int] = field(default_factory=list)


@dataclass
class ScheduleBlock:
    steps: int = 500
    eval_every: int = 20
    eval_samples: int = 16
    k_list: list[int] = field(default_factory=lambda: [1, 4, 8])
    checkpoint_every: int = 0


@dataclass
class ExperimentConfig:
    seed: int = 42
    vocab_size: int = vocab.VOCAB_SIZE
    out_dir: str = "runs/default"
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    tasks: TaskConfig = field(default_factory=TaskConfig)
    grpo: GRPOBlock = field(default_factory=GRPOBlock)
    hdpo: HDPOBlock = field(default_factory=HDPOBlock)
    optim: OptimBlock = field(default_factory=OptimBlock)
    warmstart: WarmstartBlock = field(default_factory=WarmstartBlock)
    schedule: ScheduleBlock = field(default_factory=ScheduleBlock)

    def validate(self) -> "ExperimentConfig":
        if self.grpo.group_size < 2:
            raise InvalidInputError("grpo.group_size must be >= 2")
        if self.hdpo.lam < 0:
            raise InvalidInputError("hdpo.lam must be >= 0")
        if max(self.schedule.k_list) > self.schedule.eval_samples:
            raise InvalidInputError("every k in schedule.k_list must be <= schedule.eval_samples")
        if self.vocab_size != vocab.VOCAB_SIZE:
            raise InvalidInputError(f"task vocabulary has {vocab.VOCAB_SIZE} tokens")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def hash(self) -> str:
        d = self.to_dict()
        d.pop("out_dir")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


def _build(cls, data: dict[str, Any]):
    if not isinstance(data, dict):
        raise InvalidInputError(f"expected a mapping for {cls.__name__}, got {data!r}")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in fields:
            raise InvalidInputError(f"unknown config key {cls.__name__}.{key}")
        sub = fields[key].default_factory if fields[key].default_factory is not dataclasses.MISSING else None
        if sub is not None and dataclasses.is_dataclass(sub):
            kwargs[key] = _build(sub, value)
        else:
            kwargs[key] = value
    return cls(**kwargs)


def config_from_dict(data: dict) -> ExperimentConfig:
    return _build(ExperimentConfig, data).validate()


def apply_overrides(data: dict, overrides: list[str]) -> dict:
    """Apply ``a.b=value`` overrides; values are parsed as YAML scalars."""
    data = json.loads(json.dumps(data))
    for item in overrides:
        if "=" not in item:
            raise InvalidInputError(f"override {item!r} is not of the form key=value")
        key, raw = item.split("=", 1)
        node = data
        parts = key.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
        node[parts[-1]] = yaml.safe_load(raw)
    return data


def load_config(path: str | Path, overrides: list[str] = ()) -> ExperimentConfig:
    with open(path) as fh:
        data = yaml.safe_load(fh) or {}
    return config_from_dict(apply_overrides(data, list(overrides)))


def save_config(cfg: ExperimentConfig, path: str | Path) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(cfg.to_dict(), fh, sort_keys=False)
