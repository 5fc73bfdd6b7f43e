"""Learner-side access to an autoregressive model: logits, their gradients, sampling."""
from __future__ import annotations

import abc
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np


class ContextTooLong(ValueError):
    pass


class WindowExhausted(RuntimeError):
    """Generation hit the context window before the stop rule was met."""


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


@dataclass(frozen=True)
class ParamLayout:
    """Named views into one flat parameter vector."""

    shapes: tuple[tuple[str, tuple[int, ...]], ...]

    @property
    def size(self) -> int:
        return int(sum(np.prod(s) for _, s in self.shapes))

    def unflatten(self, theta: np.ndarray) -> dict[str, np.ndarray]:
        out, i = {}, 0
        for name, shape in self.shapes:
            n = int(np.prod(shape))
            out[name] = theta[i:i + n].reshape(shape)
            i += n
        return out

    def flatten(self, parts: dict[str, np.ndarray]) -> np.ndarray:
        return np.concatenate([np.asarray(parts[name], dtype=np.float64).reshape(-1)
                               for name, _ in self.shapes])


class Decoder(abc.ABC):
    """Incremental decoding state for a batch: feed one token per sequence, get next logits."""

    @abc.abstractmethod
    def feed(self, tokens: np.ndarray) -> np.ndarray:
        """Append ``tokens`` (shape ``(B,)``) and return logits ``(B, V)`` for the next position."""


class AutoregressiveModel(abc.ABC):
    backend: str = "abstract"
    vocab_size: int
    window: int

    @property
    @abc.abstractmethod
    def n_params(self) -> int: ...

    @abc.abstractmethod
    def init_params(self, seed: int = 0) -> np.ndarray: ...

    @abc.abstractmethod
    def describe(self) -> dict:
        """Backend descriptor sufficient to rebuild the model (stored in checkpoints)."""

    @abc.abstractmethod
    def logits_all(self, theta: np.ndarray, tokens: np.ndarray) -> np.ndarray:
        """Logits for ``tokens[:, s]`` given ``tokens[:, :s]`` for ``s = 1..L-1``; shape ``(B, L-1, V)``."""

    @abc.abstractmethod
    def forward_backward(self, theta: np.ndarray, tokens: np.ndarray, weights: np.ndarray,
                         coef: Callable[[np.ndarray], np.ndarray] | None = None):
        """Per-sequence ``sum_s weights[b,s] * log p(tokens[b,s] | tokens[b,:s])`` and the gradient
        of ``sum_b c_b * that``, where ``c = coef(per_sequence)`` (treated as constant) or 1.

        Returns ``(per_sequence, grad)``.
        """

    @abc.abstractmethod
    def decoder(self, theta: np.ndarray, batch: int) -> Decoder: ...

    def check_context(self, context: Sequence[int]) -> None:
        if len(context) > self.window:
            raise ContextTooLong(f"context of length {len(context)} exceeds window {self.window}")

    def next_logits(self, theta: np.ndarray, context: Sequence[int]) -> np.ndarray:
        self.check_context(context)
        dec = self.decoder(theta, 1)
        logits = None
        for t in context:
            logits = dec.feed(np.array([t]))
        if logits is None:
            raise ValueError("context must contain at least one token")
        return logits[0]

    def grad_log_prob(self, theta: np.ndarray, context: Sequence[int], token: int) -> np.ndarray:
        """``grad_theta log P[token | context]``."""
        self.check_context(context)
        seq = np.asarray(list(context) + [token], dtype=np.int64)[None, :]
        w = np.zeros(seq.shape)
        w[0, -1] = 1.0
        _, g = self.forward_backward(theta, seq, w)
        return g

    def log_prob(self, theta: np.ndarray, context: Sequence[int], token: int) -> float:
        return float(log_softmax(self.next_logits(theta, context))[token])


@dataclass(frozen=True)
class StopRule:
    """When a generated segment ends.

    With ``blocks`` set, the segment ends at its ``blocks``-th delimiter token, and a
    block with more than ``block_budget`` non-delimiter tokens is truncated. With
    ``length`` set, the segment is exactly that many tokens.
    """

    blocks: int | None = None
    block_budget: int = 0
    delimiters: frozenset[int] = frozenset()
    length: int | None = None

    def __post_init__(self):
        if (self.blocks is None) == (self.length is None):
            raise ValueError("set exactly one of blocks or length")

    @property
    def max_tokens(self) -> int:
        if self.length is not None:
            return self.length
        return (self.block_budget + 1) * self.blocks


@dataclass
class Generation:
    tokens: list[int]
    truncated: bool


def _choose(logits: np.ndarray, rng, greedy: bool, temperature: float) -> np.ndarray:
    if greedy:
        return logits.argmax(axis=-1)
    p = softmax(logits / temperature)
    u = rng.random((p.shape[0], 1))
    idx = (p.cumsum(axis=-1) < u).sum(axis=-1)
    return np.minimum(idx, p.shape[-1] - 1)


def generate_batch(model: AutoregressiveModel, theta: np.ndarray, prompts: Sequence[Sequence[int]],
                   stop: StopRule, rng=None, greedy: bool = False, temperature: float = 1.0,
                   fill: int = 0) -> list[Generation]:
    """Continue every prompt until ``stop``; prompts may differ in length.

    All sequences advance in lockstep over absolute positions: a sequence is fed
    its own prompt tokens until the prompt runs out, then its sampled tokens.
    """
    n = len(prompts)
    if n == 0:
        return []
    plen = np.array([len(p) for p in prompts])
    if plen.min() < 1:
        raise ValueError("prompts must be non-empty")
    horizon = min(model.window, int(plen.max()) + stop.max_tokens)
    grid = np.full((n, horizon), fill, dtype=np.int64)
    for b, p in enumerate(prompts):
        grid[b, :len(p)] = p
    out = [[] for _ in range(n)]
    done = np.zeros(n, dtype=bool)
    truncated = np.zeros(n, dtype=bool)
    n_delim = np.zeros(n, dtype=np.int64)
    block_len = np.zeros(n, dtype=np.int64)
    delims = stop.delimiters
    dec = model.decoder(theta, n)
    for t in range(horizon - 1):
        if done.all():
            break
        logits = dec.feed(grid[:, t])
        active = (~done) & (plen <= t + 1)
        if not active.any():
            continue
        nxt = _choose(logits, rng, greedy, temperature)
        for b in np.flatnonzero(active):
            tok = int(nxt[b])
            grid[b, t + 1] = tok
            out[b].append(tok)
            if stop.length is not None:
                if len(out[b]) >= stop.length:
                    done[b] = True
                continue
            if tok in delims:
                n_delim[b] += 1
                block_len[b] = 0
                if n_delim[b] >= stop.blocks:
                    done[b] = True
            else:
                block_len[b] += 1
                if block_len[b] > stop.block_budget:
                    done[b] = truncated[b] = True
    truncated |= ~done
    return [Generation(out[b], bool(truncated[b])) for b in range(n)]


def sample_autoregressive(model: AutoregressiveModel, theta: np.ndarray, prompt: Sequence[int],
                          stop: StopRule, rng=None, greedy: bool = False) -> list[int]:
    """Single-sequence sampling; raises WindowExhausted instead of returning a truncated draw."""
    g = generate_batch(model, theta, [prompt], stop, rng, greedy)[0]
    if g.truncated and len(prompt) + len(g.tokens) >= model.window:
        raise WindowExhausted(f"window of {model.window} tokens exhausted after {len(g.tokens)} tokens")
    return g.tokens
