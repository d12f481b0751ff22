"""Token ids shared by the task families and the policies."""

from __future__ import annotations

LETTERS = "abcd"
LETTER_IDS = tuple(range(4))
DIGIT_IDS = tuple(range(4, 14))
PLUS = 14
MINUS = 15
SEP = 16  # closes the prompt; generation starts right after it
ANS = 17  # answer marker read by the verifier
PRIV_OPEN = 18
PRIV_CLOSE = 19
EOS = 20
VOCAB_SIZE = 21

_NAMES = {PLUS: "+", MINUS: "-", SEP: "|", ANS: "=", PRIV_OPEN: "[", PRIV_CLOSE: "]", EOS: "$"}


def digit(d: int) -> int:
    return DIGIT_IDS[d]


def letter(ch: str) -> int:
    return LETTERS.index(ch)


def to_text(tokens) -> str:
    out = []
    for t in tokens:
        t = int(t)
        if t in LETTER_IDS:
            out.append(LETTERS[t])
        elif t in DIGIT_IDS:
            out.append(str(t - DIGIT_IDS[0]))
        else:
            out.append(_NAMES.get(t, f"<{t}>"))
    return "".join(out)


def from_text(text: str) -> tuple[int, ...]:
    inverse = {v: k for k, v in _NAMES.items()}
    out = []
    for ch in text:
        if ch in LETTERS:
            out.append(letter(ch))
        elif ch.isdigit():
            out.append(digit(int(ch)))
        else:
            out.append(inverse[ch])
    return tuple(out)
