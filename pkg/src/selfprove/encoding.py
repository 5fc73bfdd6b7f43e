"""Base-B tokenization of integer tuples with typed delimiters.

A sequence for the GCD task is laid out as::

    x0-block  x1-block  y-block  [z0_k z1_k q_k blocks for k=1..T]  z0-block  z1-block  pad...

where every block is ``sign digit... delimiter`` and digits are most-significant first.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

BASE_DELIMITERS = ("x0", "x1", "y", "z0", "z1")
PAD = "<pad>"


class DecodeError(ValueError):
    """A token stream that does not parse as a sequence of signed blocks."""

    def __init__(self, position: int, reason: str):
        super().__init__(f"position {position}: {reason}")
        self.position = position
        self.reason = reason


@dataclass(frozen=True)
class Vocabulary:
    """Dense token ids: digits, then signs, then delimiters, then the pad token."""

    base: int
    cutoff: int = 0

    def __post_init__(self):
        if self.base < 2:
            raise ValueError("base must be >= 2")
        if self.cutoff < 0:
            raise ValueError("cutoff must be >= 0")

    @cached_property
    def names(self) -> tuple[str, ...]:
        names = [str(d) for d in range(self.base)] + ["+", "-"] + list(BASE_DELIMITERS)
        for k in range(1, self.cutoff + 1):
            names += [f"z0_{k}", f"z1_{k}", f"q_{k}"]
        names.append(PAD)
        return tuple(names)

    @cached_property
    def ids(self) -> dict[str, int]:
        return {name: i for i, name in enumerate(self.names)}

    def __len__(self) -> int:
        return len(self.names)

    @property
    def plus(self) -> int:
        return self.base

    @property
    def minus(self) -> int:
        return self.base + 1

    @property
    def pad(self) -> int:
        return len(self.names) - 1

    def delimiter(self, name: str) -> int:
        return self.ids[name]

    def is_digit(self, tok: int) -> bool:
        return 0 <= tok < self.base

    def is_delimiter(self, tok: int) -> bool:
        return self.base + 2 <= tok < self.pad

    def step_delimiters(self, k: int) -> tuple[str, str, str]:
        """Delimiter names for annotation step ``k`` (1-based)."""
        return (f"z0_{k}", f"z1_{k}", f"q_{k}")

    def block_order(self) -> list[str]:
        order = ["x0", "x1", "y"]
        for k in range(1, self.cutoff + 1):
            order += list(self.step_delimiters(k))
        return order + ["z0", "z1"]

    def to_names(self, tokens: Iterable[int]) -> list[str]:
        return [self.names[t] for t in tokens]

    def from_names(self, names: Iterable[str]) -> list[int]:
        return [self.ids[n] for n in names]

    def table(self) -> str:
        """Two-column ``id<TAB>name`` listing."""
        return "".join(f"{i}\t{name}\n" for i, name in enumerate(self.names))


def encode_int(n: int, vocab: Vocabulary) -> list[int]:
    """Sign token followed by base-B digits of ``|n|``, most significant first."""
    n = int(n)
    sign = vocab.minus if n < 0 else vocab.plus
    m = abs(n)
    digits = []
    while True:
        m, d = divmod(m, vocab.base)
        digits.append(d)
        if m == 0:
            break
    return [sign] + digits[::-1]


def encode_block(n: int, delimiter: str, vocab: Vocabulary) -> list[int]:
    return encode_int(n, vocab) + [vocab.delimiter(delimiter)]


@dataclass
class TokenSequence:
    tokens: np.ndarray
    mask: np.ndarray

    def __len__(self) -> int:
        return len(self.tokens)


def encode_fields(x0, x1, y, steps, z0, z1, vocab: Vocabulary) -> list[int]:
    if len(steps) != vocab.cutoff:
        raise ValueError(f"expected {vocab.cutoff} annotation steps, got {len(steps)}")
    toks = encode_block(x0, "x0", vocab) + encode_block(x1, "x1", vocab) + encode_block(y, "y", vocab)
    for k, (s0, r0, q) in enumerate(steps, start=1):
        d_s, d_r, d_q = vocab.step_delimiters(k)
        toks += encode_block(s0, d_s, vocab) + encode_block(r0, d_r, vocab) + encode_block(q, d_q, vocab)
    return toks + encode_block(z0, "z0", vocab) + encode_block(z1, "z1", vocab)


def prompt_length(tokens: Sequence[int], vocab: Vocabulary) -> int:
    """Number of tokens up to and including the ``x1`` delimiter."""
    x1 = vocab.delimiter("x1")
    for i, t in enumerate(tokens):
        if t == x1:
            return i + 1
    raise DecodeError(len(tokens), "missing x1 delimiter")


def loss_mask(tokens: Sequence[int], vocab: Vocabulary) -> np.ndarray:
    """True on output and proof tokens, false on the input block and on padding."""
    tokens = np.asarray(tokens)
    mask = tokens != vocab.pad
    mask[: prompt_length(tokens, vocab)] = False
    return mask


def pad_to(tokens: Sequence[int], length: int, vocab: Vocabulary) -> list[int]:
    if len(tokens) > length:
        raise ValueError(f"sequence of length {len(tokens)} exceeds {length}")
    return list(tokens) + [vocab.pad] * (length - len(tokens))


def encode_example(inst, y: int, annotated, vocab: Vocabulary, length: int | None = None) -> TokenSequence:
    """Encode an input, its output and its (annotated) proof as one training sequence.

    ``annotated`` carries ``steps`` (exactly ``vocab.cutoff`` triples) and ``proof``.
    """
    if len(annotated.steps) != vocab.cutoff:
        raise ValueError("annotation cutoff does not match vocabulary cutoff")
    toks = encode_fields(inst.x0, inst.x1, y, annotated.steps,
                         annotated.proof.z0, annotated.proof.z1, vocab)
    if length is not None:
        toks = pad_to(toks, length, vocab)
    arr = np.asarray(toks, dtype=np.int64)
    return TokenSequence(arr, loss_mask(arr, vocab))


@dataclass
class DecodedBlocks:
    """Blocks parsed from a token stream, in order, plus the first error if any."""

    blocks: list[tuple[str, int]] = field(default_factory=list)
    error: DecodeError | None = None

    @property
    def ok(self) -> bool:
        return self.error is None

    def fields(self, vocab: Vocabulary) -> dict:
        """Map blocks onto ``x0, x1, y, steps, z0, z1``; raises DecodeError if the layout is wrong."""
        if self.error is not None:
            raise self.error
        order = vocab.block_order()
        names = [name for name, _ in self.blocks]
        if names != order:
            raise DecodeError(len(names), f"block layout {names} does not match {order}")
        vals = [v for _, v in self.blocks]
        steps = [tuple(vals[3 + 3 * k: 6 + 3 * k]) for k in range(vocab.cutoff)]
        return dict(x0=vals[0], x1=vals[1], y=vals[2], steps=steps, z0=vals[-2], z1=vals[-1])


def decode_blocks(seq: Sequence[int], vocab: Vocabulary) -> DecodedBlocks:
    """Parse ``sign digits... delimiter`` blocks; trailing pad tokens are allowed.

    Never raises: a malformed stream yields the longest well-formed prefix and an error.
    """
    out = DecodedBlocks()
    seq = [int(t) for t in seq]
    n_vocab, base, pad = len(vocab), vocab.base, vocab.pad
    plus, minus, names = vocab.plus, vocab.minus, vocab.names
    i, n = 0, len(seq)
    while i < n:
        start = i
        tok = seq[i]
        if tok == pad:
            if any(t != pad for t in seq[i:]):
                j = next(j for j in range(i, n) if seq[j] != pad)
                out.error = DecodeError(j, "token after padding")
            return out
        if not 0 <= tok < n_vocab:
            out.error = DecodeError(i, f"unknown token id {tok}")
            return out
        if tok != plus and tok != minus:
            out.error = DecodeError(i, f"expected sign, got {names[tok]!r}")
            return out
        negative = tok == minus
        i += 1
        value, n_digits = 0, 0
        while i < n and 0 <= seq[i] < base:
            value = value * base + seq[i]
            n_digits += 1
            i += 1
        if n_digits == 0:
            out.error = DecodeError(i, "block has no digits")
            return out
        if i >= n:
            out.error = DecodeError(i, "sequence ends inside a number")
            return out
        tok = seq[i]
        if not 0 <= tok < n_vocab:
            out.error = DecodeError(i, f"unknown token id {tok}")
            return out
        if not base + 2 <= tok < pad:
            out.error = DecodeError(i, f"expected delimiter, got {names[tok]!r}")
            return out
        if n_digits > 1 and seq[start + 1] == 0:
            out.error = DecodeError(start + 1, "leading zero")
            return out
        if negative and value == 0:
            out.error = DecodeError(start, "negative zero")
            return out
        out.blocks.append((names[tok], -value if negative else value))
        i += 1
    return out


def extract_blocks(answer: Sequence[int], vocab: Vocabulary) -> tuple[list[int], DecodedBlocks]:
    """Like :func:`extract`, also returning the decoded blocks of the whole answer."""
    answer = [int(t) for t in answer]
    while answer and answer[-1] == vocab.pad:
        answer.pop()
    decoded = decode_blocks(answer, vocab)
    if decoded.error is not None:
        raise decoded.error
    names = [name for name, _ in decoded.blocks]
    n_steps = (len(names) - 2) // 3
    expected = [d for k in range(1, n_steps + 1) for d in vocab.step_delimiters(k)] + ["z0", "z1"]
    if n_steps > vocab.cutoff or names != expected:
        raise DecodeError(len(answer), f"answer blocks {names} are not annotation steps then z0, z1")
    lo, hi = vocab.base + 2, vocab.pad
    prev_start, last_start, start = 0, 0, 0
    for i, t in enumerate(answer):
        if lo <= t < hi:
            prev_start, last_start = last_start, start
            start = i + 1
    return answer[prev_start:], decoded


def extract(answer: Sequence[int], vocab: Vocabulary) -> list[int]:
    """Drop annotation blocks and return the tokens of the final ``z0, z1`` blocks.

    Accepts zero up to ``vocab.cutoff`` complete annotation steps in order, so an
    unannotated proof extracts to itself. Raises DecodeError on anything else.
    """
    return extract_blocks(answer, vocab)[0]


def omega(b: int) -> int:
    """Number of distinct prime divisors of ``b`` by trial division."""
    if b < 2:
        raise ValueError("omega is defined for b >= 2")
    count, p = 0, 2
    while p * p <= b:
        if b % p == 0:
            count += 1
            while b % p == 0:
                b //= p
        p += 1
    return count + (1 if b > 1 else 0)
