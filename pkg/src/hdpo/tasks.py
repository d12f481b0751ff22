"""Synthetic verifiable task families.

modular-chain
    A start digit followed by ``difficulty`` operations ``+k`` / ``-k`` (k in
    1..9), all mod 10. The worked trace lists every intermediate value, then
    the answer marker and the final digit.
copy-reverse
    A string of ``difficulty`` letters over ``abcd``; the answer is the string
    reversed.

Every prompt ends with ``SEP``. A correct completion is the ground-truth
trace followed by ``EOS``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from hdpo import vocab
from hdpo.errors import InvalidInputError
from hdpo.policy import Context, Tokens

FAMILIES = ("modular-chain", "copy-reverse")


@dataclass(frozen=True)
class TaskInstance:
    family: str
    difficulty: int
    seed: int
    prompt: Tokens
    ground_truth: Tokens
    answer: Tokens

    @property
    def instance_id(self) -> str:
        return f"{self.family}/{self.difficulty}/{self.seed}"

    def context(self) -> Context:
        return Context(self.prompt)

    def reference_completion(self) -> Tokens:
        return self.ground_truth + (vocab.EOS,)

    def to_record(self) -> dict:
        return asdict(self)

    @classmethod
    def from_record(cls, rec: dict) -> "TaskInstance":
        return cls(
            family=rec["family"],
            difficulty=int(rec["difficulty"]),
            seed=int(rec["seed"]),
            prompt=tuple(rec["prompt"]),
            ground_truth=tuple(rec["ground_truth"]),
            answer=tuple(rec["answer"]),
        )


def modular_chain_parts(start: int, ops: Sequence[int]) -> tuple[Tokens, Tokens, Tokens]:
    """``ops`` are signed steps, e.g. ``[4, -2]`` for ``+4; -2``."""
    value = start % 10
    prompt = [vocab.digit(value)]
    trace = []
    for k in ops:
        if not 1 <= abs(k) <= 9:
            raise InvalidInputError(f"operation {k} outside +-1..9")
        prompt += [vocab.PLUS if k > 0 else vocab.MINUS, vocab.digit(abs(k))]
        value = (value + k) % 10
        trace.append(vocab.digit(value))
    answer = (vocab.digit(value),)
    return tuple(prompt) + (vocab.SEP,), tuple(trace) + (vocab.ANS,) + answer, answer


def copy_reverse_parts(text: str) -> tuple[Tokens, Tokens, Tokens]:
    letters = tuple(vocab.letter(ch) for ch in text)
    answer = letters[::-1]
    return letters + (vocab.SEP,), (vocab.ANS,) + answer, answer


def _modular_chain(difficulty: int, rng: np.random.Generator):
    start = int(rng.integers(10))
    ops = [int(k) if rng.random() < 0.5 else -int(k) for k in rng.integers(1, 10, difficulty)]
    return modular_chain_parts(start, ops)


def _copy_reverse(difficulty: int, rng: np.random.Generator):
    return copy_reverse_parts("".join(vocab.LETTERS[i] for i in rng.integers(0, len(vocab.LETTERS), difficulty)))


_BUILDERS = {"modular-chain": _modular_chain, "copy-reverse": _copy_reverse}


def generate_task(family: str, difficulty: int, seed: int) -> TaskInstance:
    """Build one instance; identical arguments give identical instances."""
    if family not in _BUILDERS:
        raise InvalidInputError(f"unknown task family {family!r}; expected one of {FAMILIES}")
    if difficulty < 1:
        raise InvalidInputError("difficulty must be >= 1")
    rng = np.random.default_rng([FAMILIES.index(family), difficulty, seed])
    prompt, gt, answer = _BUILDERS[family](difficulty, rng)
    task = TaskInstance(family, difficulty, seed, prompt, gt, answer)
    if verify(task, task.reference_completion()) != 1:
        raise AssertionError(f"ground truth fails its own verifier: {task}")
    return task


def extract_answer(completion: Sequence[int], answer_len: int) -> Tokens:
    toks = tuple(int(t) for t in completion)
    if vocab.EOS in toks:
        toks = toks[: toks.index(vocab.EOS)]
    if vocab.ANS in toks:
        last = len(toks) - 1 - toks[::-1].index(vocab.ANS)
        return toks[last + 1:]
    if answer_len <= 0:
        return ()
    return toks[-answer_len:]


def verify(task: TaskInstance, completion: Sequence[int]) -> int:
    """1 iff the extracted final answer equals the canonical answer exactly."""
    try:
        return int(extract_answer(completion, len(task.answer)) == task.answer)
    except (TypeError, ValueError):
        return 0


def privileged_prompt(task: TaskInstance) -> Context:
    return Context(task.prompt, task.ground_truth)


def sample_tasks(
    families: Sequence[str],
    difficulties: Sequence[int],
    weights: Sequence[float] | None,
    n: int,
    rng: np.random.Generator,
) -> list[TaskInstance]:
    """Draw ``n`` instances with uniform family and weighted difficulty."""
    w = None if weights is None else np.asarray(weights, dtype=np.float64) / np.sum(weights)
    fam = rng.integers(0, len(families), n)
    diff = rng.choice(len(difficulties), size=n, p=w)
    seeds = rng.integers(0, 2**31 - 1, n)
    return [generate_task(families[f], int(difficulties[d]), int(s)) for f, d, s in zip(fam, diff, seeds)]


def write_task_set(path: str | Path, tasks: Iterable[TaskInstance]) -> None:
    with open(path, "w") as fh:
        for t in tasks:
            fh.write(json.dumps(t.to_record()) + "\n")


def read_task_set(path: str | Path) -> list[TaskInstance]:
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                out.append(TaskInstance.from_record(json.loads(line)))
            except (json.JSONDecodeError, KeyError) as exc:
                raise ValueError(f"{path}:{lineno}: malformed task record ({exc})") from exc
    return out
