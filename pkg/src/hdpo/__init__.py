"""GRPO with privileged self-distillation on cliff prompts, at desk scale."""

__version__ = "0.1.0"
