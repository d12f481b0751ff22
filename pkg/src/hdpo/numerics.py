"""Probability-vector and divergence primitives.

All divergences are in nats and computed in float64.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from hdpo.errors import InvalidInputError

LN2 = math.log(2.0)


def _as_finite(z, name: str = "z") -> np.ndarray:
    arr = np.asarray(z, dtype=np.float64)
    if arr.ndim != 1 or arr.size < 2:
        raise InvalidInputError(f"{name} must be a vector of length >= 2, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} contains non-finite entries")
    return arr


def softmax(z) -> np.ndarray:
    z = _as_finite(z)
    e = np.exp(z - z.max())
    return e / e.sum()


def log_softmax(z) -> np.ndarray:
    z = _as_finite(z)
    shifted = z - z.max()
    return shifted - math.log(np.exp(shifted).sum())


def softmax_rows(z: np.ndarray) -> np.ndarray:
    """Row-wise softmax for a (B, V) logit matrix. No validation."""
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax_rows(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def kl_divergence(p, q) -> float:
    """KL(p || q) in nats; ``math.inf`` when p puts mass where q has none."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise InvalidInputError(f"shape mismatch {p.shape} vs {q.shape}")
    mask = p > 0
    if np.any(q[mask] <= 0):
        return math.inf
    val = float(np.sum(p[mask] * (np.log(p[mask]) - np.log(q[mask]))))
    # rounding can leave a tiny negative number for p ~= q
    return max(val, 0.0)


def jsd_exact(p, q) -> float:
    """Jensen-Shannon divergence with equal weights; lies in [0, ln 2]."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    m = 0.5 * (p + q)
    return 0.5 * kl_divergence(p, m) + 0.5 * kl_divergence(q, m)


@dataclass(frozen=True)
class TopKDistribution:
    """Teacher distribution truncated to ``support`` and renormalized there."""

    support: tuple[int, ...]
    probs: np.ndarray

    def __post_init__(self) -> None:
        if len(set(self.support)) != len(self.support):
            raise InvalidInputError(f"duplicate support ids in {self.support}")
        if len(self.support) != len(self.probs) or not self.support:
            raise InvalidInputError("support and probs must be non-empty and equal length")
        if abs(float(np.sum(self.probs)) - 1.0) > 1e-9 or np.any(self.probs < 0):
            raise InvalidInputError("probs must be a normalized distribution over the support")

    @property
    def k(self) -> int:
        return len(self.support)

    @classmethod
    def from_weights(cls, support, weights) -> "TopKDistribution":
        w = np.asarray(weights, dtype=np.float64)
        total = w.sum()
        if not total > 0:
            raise InvalidInputError("weights on the support must have positive mass")
        return cls(tuple(int(s) for s in support), w / total)

    def dense(self, vocab_size: int) -> np.ndarray:
        out = np.zeros(vocab_size)
        out[list(self.support)] = self.probs
        return out


def _half_kl_terms(a: np.ndarray, m: np.ndarray) -> float:
    mask = a > 0
    return 0.5 * float(np.sum(a[mask] * (np.log(a[mask]) - np.log(m[mask]))))


def jsd_topk(teacher: TopKDistribution, student_full) -> float:
    """JSD between a truncated teacher and a full student distribution.

    The support part is evaluated directly; student mass outside the support
    meets zero teacher mass, so each off-support token contributes exactly
    ``0.5 * q * ln 2`` and the whole tail collapses to ``0.5 * P_rest * ln 2``.
    """
    q = np.asarray(student_full, dtype=np.float64)
    idx = np.asarray(teacher.support, dtype=np.int64)
    if idx.min() < 0 or idx.max() >= q.size:
        raise InvalidInputError("teacher support ids out of range for the student vector")
    p_s = teacher.probs
    q_s = q[idx]
    m_s = 0.5 * (p_s + q_s)
    inside = _half_kl_terms(p_s, m_s) + _half_kl_terms(q_s, m_s)
    off = np.ones(q.size, dtype=bool)
    off[idx] = False
    p_rest = float(q[off].sum())
    return inside + 0.5 * p_rest * LN2


def jsd_topk_grad_logits(teacher_dense: np.ndarray, student_logits: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-row top-k JSD values and their gradients w.r.t. student logits.

    ``teacher_dense`` holds the renormalized teacher probabilities with zeros
    off-support, shape (B, V). dJSD/dq_v = 0.5 * ln(q_v / m_v); chained
    through the softmax Jacobian.
    """
    q = softmax_rows(student_logits)
    p = teacher_dense
    m = 0.5 * (p + q)
    with np.errstate(divide="ignore", invalid="ignore"):
        log_q_m = np.where(q > 0, np.log(q) - np.log(m), 0.0)
        log_p_m = np.where(p > 0, np.log(p) - np.log(m), 0.0)
    values = 0.5 * np.sum(p * log_p_m, axis=-1) + 0.5 * np.sum(q * log_q_m, axis=-1)
    g = 0.5 * log_q_m
    dz = q * (g - np.sum(q * g, axis=-1, keepdims=True))
    return values, dz


def lemma1_bound_holds(z, delta) -> tuple[float, float, bool]:
    """Check KL(softmax(z) || softmax(z + delta)) <= max|delta|^2 / 2."""
    z = _as_finite(z, "z")
    delta = _as_finite(delta, "delta")
    if z.shape != delta.shape:
        raise InvalidInputError("z and delta must have the same length")
    kl = kl_divergence(softmax(z), softmax(z + delta))
    bound = float(np.max(np.abs(delta))) ** 2 / 2.0
    return kl, bound, kl <= bound + 1e-12


def total_variation(p, q) -> float:
    return 0.5 * float(np.sum(np.abs(np.asarray(p, dtype=np.float64) - np.asarray(q, dtype=np.float64))))
