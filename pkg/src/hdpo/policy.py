"""Tiny autoregressive policies: an enumerable tabular table and a small MLP.

Both backends expose the same surface: batched logits over token contexts,
a vector-Jacobian ``backward`` from per-context logit gradients to parameter
gradients, and functional parameter replacement. Losses in this package are
all functions of logits at a finite set of contexts, so a loss is handed to
the policy as a :class:`LogitLoss` (value plus dL/dlogits per context).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from hdpo import vocab
from hdpo.errors import InvalidInputError, NumericError
from hdpo.numerics import log_softmax_rows, softmax_rows

Tokens = tuple[int, ...]


@dataclass(frozen=True)
class Context:
    """Prompt, optional privileged block, and generated prefix.

    ``tokens`` renders ``prompt + [PRIV_OPEN] + privileged + [PRIV_CLOSE] + generated``;
    an empty or missing block renders as ``prompt + generated``.
    """

    prompt: Tokens
    privileged: Tokens | None = None
    generated: Tokens = ()

    @property
    def tokens(self) -> Tokens:
        # an empty block carries no information and renders as the plain context
        if not self.privileged:
            return self.prompt + self.generated
        return self.prompt + (vocab.PRIV_OPEN,) + self.privileged + (vocab.PRIV_CLOSE,) + self.generated

    def student(self) -> "Context":
        return Context(self.prompt, None, self.generated)

    def extend(self, tokens: Sequence[int]) -> "Context":
        return Context(self.prompt, self.privileged, self.generated + tuple(int(t) for t in tokens))

    def __len__(self) -> int:
        return len(self.tokens)


@dataclass(frozen=True)
class Trajectory:
    prompt: Context
    tokens: Tokens
    logprobs: np.ndarray = field(repr=False)
    reward: int = 0
    truncated: bool = False
    temperature: float = 1.0

    def __len__(self) -> int:
        return len(self.tokens)

    def contexts(self) -> list[Tokens]:
        """Token context preceding each generated position."""
        base = self.prompt.tokens
        return [base + self.tokens[:t] for t in range(len(self.tokens))]


class Gradient:
    """Parameter-keyed gradient store with a token tally."""

    def __init__(self, grads: dict | None = None, n_tokens: int = 0) -> None:
        self.grads = grads if grads is not None else {}
        self.n_tokens = n_tokens

    def __add__(self, other: "Gradient") -> "Gradient":
        out = {k: v.copy() for k, v in self.grads.items()}
        for k, v in other.grads.items():
            if k in out:
                out[k] = out[k] + v
            else:
                out[k] = v.copy()
        return Gradient(out, self.n_tokens + other.n_tokens)

    def scaled(self, c: float) -> "Gradient":
        return Gradient({k: c * v for k, v in self.grads.items()}, self.n_tokens)

    def global_norm(self) -> float:
        return math.sqrt(sum(float(np.sum(v * v)) for v in self.grads.values()))

    def max_abs(self) -> float:
        return max((float(np.max(np.abs(v))) for v in self.grads.values() if v.size), default=0.0)

    def flat(self, keys: Sequence) -> np.ndarray:
        return np.concatenate([self.grads[k].ravel() for k in keys]) if keys else np.zeros(0)


@dataclass
class LogitLoss:
    """Scalar loss expressed through logits at ``contexts``.

    ``dlogits[i]`` is dL/dz at ``contexts[i]``.
    """

    value: float
    contexts: list[Tokens]
    dlogits: np.ndarray
    n_tokens: int = 0

    @classmethod
    def zero(cls, vocab_size: int) -> "LogitLoss":
        return cls(0.0, [], np.zeros((0, vocab_size)))

    def __add__(self, other: "LogitLoss") -> "LogitLoss":
        return LogitLoss(
            self.value + other.value,
            self.contexts + other.contexts,
            np.concatenate([self.dlogits, other.dlogits]),
            self.n_tokens + other.n_tokens,
        )

    def scaled(self, c: float) -> "LogitLoss":
        return LogitLoss(c * self.value, self.contexts, c * self.dlogits, self.n_tokens)


class TabularPolicy:
    """Logit table keyed by the last ``window`` tokens; unseen keys are uniform."""

    backend = "tabular"

    def __init__(self, vocab_size: int, window: int | None = None, table: dict | None = None) -> None:
        if vocab_size < 2:
            raise InvalidInputError("vocab_size must be >= 2")
        self.vocab_size = vocab_size
        self.window = window
        self.table: dict[Tokens, np.ndarray] = table if table is not None else {}

    def key(self, seq: Sequence[int]) -> Tokens:
        seq = tuple(int(t) for t in seq)
        return seq if self.window is None else seq[-self.window:]

    def logits_batch(self, seqs: Sequence[Sequence[int]]) -> np.ndarray:
        out = np.zeros((len(seqs), self.vocab_size))
        for i, s in enumerate(seqs):
            row = self.table.get(self.key(s))
            if row is not None:
                out[i] = row
        return out

    def backward(self, seqs: Sequence[Sequence[int]], dlogits: np.ndarray) -> Gradient:
        grads: dict[Tokens, np.ndarray] = {}
        for s, g in zip(seqs, dlogits):
            k = self.key(s)
            if k in grads:
                grads[k] += g
            else:
                grads[k] = np.array(g, dtype=np.float64)
        return Gradient(grads)

    @property
    def params(self) -> dict:
        return self.table

    def replace(self, params: dict) -> "TabularPolicy":
        return TabularPolicy(self.vocab_size, self.window, params)

    def copy(self) -> "TabularPolicy":
        return self.replace({k: v.copy() for k, v in self.table.items()})

    def set_row(self, seq: Sequence[int], logits) -> None:
        """Mutating setter for building fixtures; not used during training."""
        row = np.asarray(logits, dtype=np.float64)
        if row.shape != (self.vocab_size,):
            raise InvalidInputError("row length must equal vocab_size")
        self.table[self.key(seq)] = row


class TinyNetPolicy:
    """Embeddings of the last ``window`` tokens -> tanh hidden layer -> logits.

    Positions before the start of the context use a zero embedding.
    """

    backend = "tiny-net"
    PARAM_KEYS = ("embed", "w1", "b1", "w2", "b2")

    def __init__(self, vocab_size: int, window: int, embed_dim: int, hidden: int, params: dict) -> None:
        self.vocab_size = vocab_size
        self.window = window
        self.embed_dim = embed_dim
        self.hidden = hidden
        self.params = params
        expected = {
            "embed": (vocab_size, embed_dim),
            "w1": (window * embed_dim, hidden),
            "b1": (hidden,),
            "w2": (hidden, vocab_size),
            "b2": (vocab_size,),
        }
        for k, shape in expected.items():
            if params[k].shape != shape:
                raise InvalidInputError(f"param {k} has shape {params[k].shape}, expected {shape}")

    @classmethod
    def init(
        cls,
        rng: np.random.Generator,
        vocab_size: int = vocab.VOCAB_SIZE,
        window: int = 8,
        embed_dim: int = 16,
        hidden: int = 64,
        out_scale: float = 1.0,
    ) -> "TinyNetPolicy":
        params = {
            "embed": rng.normal(0.0, 1.0, (vocab_size, embed_dim)),
            "w1": rng.normal(0.0, 1.0 / math.sqrt(window * embed_dim), (window * embed_dim, hidden)),
            "b1": np.zeros(hidden),
            "w2": rng.normal(0.0, out_scale / math.sqrt(hidden), (hidden, vocab_size)),
            "b2": np.zeros(vocab_size),
        }
        return cls(vocab_size, window, embed_dim, hidden, params)

    def _index(self, seqs: Sequence[Sequence[int]]) -> np.ndarray:
        idx = np.full((len(seqs), self.window), self.vocab_size, dtype=np.int64)
        for i, s in enumerate(seqs):
            tail = s[-self.window:]
            if tail:
                idx[i, self.window - len(tail):] = tail
        return idx

    def _forward(self, seqs):
        p = self.params
        idx = self._index(seqs)
        table = np.vstack([p["embed"], np.zeros((1, self.embed_dim))])
        x = table[idx].reshape(len(seqs), -1)
        h = np.tanh(x @ p["w1"] + p["b1"])
        z = h @ p["w2"] + p["b2"]
        return idx, x, h, z

    def logits_batch(self, seqs: Sequence[Sequence[int]]) -> np.ndarray:
        if len(seqs) == 0:
            return np.zeros((0, self.vocab_size))
        return self._forward(seqs)[3]

    def backward(self, seqs: Sequence[Sequence[int]], dlogits: np.ndarray) -> Gradient:
        p = self.params
        if len(seqs) == 0:
            return Gradient({k: np.zeros_like(p[k]) for k in self.PARAM_KEYS})
        idx, x, h, _ = self._forward(seqs)
        dz = np.asarray(dlogits, dtype=np.float64)
        dw2 = h.T @ dz
        db2 = dz.sum(axis=0)
        da = (dz @ p["w2"].T) * (1.0 - h * h)
        dw1 = x.T @ da
        db1 = da.sum(axis=0)
        dx = (da @ p["w1"].T).reshape(len(seqs), self.window, self.embed_dim)
        dtable = np.zeros((self.vocab_size + 1, self.embed_dim))
        np.add.at(dtable, idx, dx)
        return Gradient({"embed": dtable[:-1], "w1": dw1, "b1": db1, "w2": dw2, "b2": db2})

    def replace(self, params: dict) -> "TinyNetPolicy":
        return TinyNetPolicy(self.vocab_size, self.window, self.embed_dim, self.hidden, params)

    def copy(self) -> "TinyNetPolicy":
        return self.replace({k: v.copy() for k, v in self.params.items()})


Policy = TabularPolicy | TinyNetPolicy


def logits(policy: Policy, ctx: Context | Sequence[int]) -> np.ndarray:
    seq = ctx.tokens if isinstance(ctx, Context) else tuple(ctx)
    if len(seq) == 0:
        raise InvalidInputError("empty context")
    return policy.logits_batch([seq])[0]


def _sample_rows(probs: np.ndarray, u: np.ndarray) -> np.ndarray:
    cdf = np.cumsum(probs, axis=1)
    tok = (cdf < u[:, None] * cdf[:, -1:]).sum(axis=1)
    return np.minimum(tok, probs.shape[1] - 1)


def sample_batch(
    policy: Policy,
    prompts: Sequence[Context],
    max_len: int,
    temperature: float,
    uniforms: np.ndarray,
    eos: int = vocab.EOS,
) -> list[Trajectory]:
    """Sample one rollout per prompt; row i of ``uniforms`` drives rollout i.

    Because every rollout consumes only its own row, results do not depend
    on how rollouts are batched together.
    """
    if max_len < 1:
        raise InvalidInputError("max_len must be >= 1")
    if not temperature > 0:
        raise InvalidInputError("temperature must be positive")
    n = len(prompts)
    if uniforms.shape[0] != n or uniforms.shape[1] < max_len:
        raise InvalidInputError("need one row of >= max_len uniforms per prompt")
    gen: list[list[int]] = [[] for _ in range(n)]
    lps: list[list[float]] = [[] for _ in range(n)]
    active = list(range(n))
    bases = [p.tokens for p in prompts]
    for t in range(max_len):
        if not active:
            break
        z = policy.logits_batch([bases[i] + tuple(gen[i]) for i in active])
        logp = log_softmax_rows(z)
        probs = logp if temperature == 1.0 else log_softmax_rows(z / temperature)
        toks = _sample_rows(np.exp(probs), uniforms[active, t])
        still = []
        for j, i in enumerate(active):
            tok = int(toks[j])
            gen[i].append(tok)
            lps[i].append(float(logp[j, tok]))
            if tok != eos:
                still.append(i)
        active = still
    return [
        Trajectory(
            prompt=prompts[i],
            tokens=tuple(gen[i]),
            logprobs=np.array(lps[i]),
            truncated=(len(gen[i]) == max_len and gen[i][-1] != eos),
            temperature=temperature,
        )
        for i in range(n)
    ]


def sample_rollout(
    policy: Policy, prompt: Context, max_len: int, temperature: float, rng: np.random.Generator
) -> Trajectory:
    if max_len < 1:
        raise InvalidInputError("max_len must be >= 1")
    return sample_batch(policy, [prompt], max_len, temperature, rng.random((1, max_len)))[0]


def token_logprobs(policy: Policy, trajs: Sequence[Trajectory]) -> list[np.ndarray]:
    """Per-token log-probabilities of each trajectory under ``policy``."""
    seqs: list[Tokens] = []
    targets: list[int] = []
    for tr in trajs:
        seqs.extend(tr.contexts())
        targets.extend(tr.tokens)
    if not seqs:
        return [np.zeros(0) for _ in trajs]
    logp = log_softmax_rows(policy.logits_batch(seqs))
    flat = logp[np.arange(len(seqs)), targets]
    out, pos = [], 0
    for tr in trajs:
        out.append(flat[pos:pos + len(tr)])
        pos += len(tr)
    return out


def trajectory_logprob(policy: Policy, traj: Trajectory) -> float:
    return float(np.sum(token_logprobs(policy, [traj])[0]))


def cross_entropy_loss(policy: Policy, seqs: Sequence[Tokens], targets: Sequence[int]) -> LogitLoss:
    """Mean token-level -ln pi(target | context)."""
    n = len(seqs)
    if n == 0:
        return LogitLoss.zero(policy.vocab_size)
    z = policy.logits_batch(seqs)
    logp = log_softmax_rows(z)
    rows = np.arange(n)
    value = -float(np.mean(logp[rows, targets]))
    dz = np.exp(logp)
    dz[rows, targets] -= 1.0
    return LogitLoss(value, list(seqs), dz / n, n)


def grad_of_scalar_loss(policy: Policy, loss: LogitLoss) -> Gradient:
    if not math.isfinite(loss.value):
        raise NumericError("non-finite loss value", ("value",))
    bad = ~np.isfinite(loss.dlogits)
    if bad.any():
        row = int(np.argwhere(bad)[0][0])
        raise NumericError("non-finite logit gradient", ("context", row))
    grad = policy.backward(loss.contexts, loss.dlogits)
    grad.n_tokens = loss.n_tokens
    return grad


def finite_difference_grad(
    policy: Policy, loss_fn: Callable[[Policy], float], step: float = 1e-5
) -> dict:
    """Central differences of ``loss_fn`` over every parameter entry."""
    out = {}
    base = {k: v.copy() for k, v in policy.params.items()}
    for k, arr in base.items():
        g = np.zeros_like(arr)
        for i in np.ndindex(arr.shape):
            plus = {kk: vv.copy() for kk, vv in base.items()}
            minus = {kk: vv.copy() for kk, vv in base.items()}
            plus[k][i] += step
            minus[k][i] -= step
            g[i] = (loss_fn(policy.replace(plus)) - loss_fn(policy.replace(minus))) / (2 * step)
        out[k] = g
    return out


@dataclass(frozen=True)
class AdamWConfig:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01


@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def clip_by_global_norm(grad: Gradient, max_norm: float) -> tuple[Gradient, float]:
    norm = grad.global_norm()
    if max_norm > 0 and norm > max_norm:
        return grad.scaled(max_norm / norm), norm
    return grad, norm


def apply_update(
    policy: Policy,
    grad: Gradient,
    state: AdamState,
    lr: float,
    max_grad_norm: float = 1.0,
    cfg: AdamWConfig = AdamWConfig(),
) -> tuple[Policy, AdamState]:
    """Global-norm clipping then one AdamW step. Returns new policy and state."""
    params = policy.params
    for k, g in grad.grads.items():
        if k in params and params[k].shape != g.shape:
            raise InvalidInputError(f"gradient for {k!r} has shape {g.shape}, parameter has {params[k].shape}")
        if k not in params and (policy.backend != "tabular" or g.shape != (policy.vocab_size,)):
            raise InvalidInputError(f"gradient for unknown parameter {k!r}")
    grad, _ = clip_by_global_norm(grad, max_grad_norm)
    t = state.step + 1
    b1, b2 = cfg.beta1, cfg.beta2
    new_params, new_m, new_v = {}, dict(state.m), dict(state.v)
    keys = list(params) + [k for k in grad.grads if k not in params]
    for k in keys:
        p = params[k] if k in params else np.zeros(policy.vocab_size)
        p = p - lr * cfg.weight_decay * p
        g = grad.grads.get(k)
        if g is not None or k in state.m:
            g = g if g is not None else np.zeros_like(p)
            m = b1 * state.m.get(k, 0.0) + (1 - b1) * g
            v = b2 * state.v.get(k, 0.0) + (1 - b2) * g * g
            m_hat = m / (1 - b1 ** t)
            v_hat = v / (1 - b2 ** t)
            p = p - lr * m_hat / (np.sqrt(v_hat) + cfg.eps)
            new_m[k], new_v[k] = m, v
        new_params[k] = p
    return policy.replace(new_params), AdamState(t, new_m, new_v)
