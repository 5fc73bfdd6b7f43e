"""k-gram softmax model: one row of logits per context of the last k tokens."""
from __future__ import annotations

import numpy as np

from .base import AutoregressiveModel, Decoder, log_softmax, softmax


class TabularModel(AutoregressiveModel):
    """``P[sigma | context] = softmax(theta[row(last k tokens)])[sigma]``.

    Contexts shorter than ``k`` are left-padded with token 0, so they share rows
    with real contexts; this keeps ``d = V**k * V`` exactly.
    """

    backend = "tabular"

    def __init__(self, vocab_size: int, order: int, window: int = 1 << 30):
        if order < 0:
            raise ValueError("order must be >= 0")
        self.vocab_size = vocab_size
        self.order = order
        self.window = window

    @property
    def n_rows(self) -> int:
        return self.vocab_size ** self.order

    @property
    def n_params(self) -> int:
        return self.n_rows * self.vocab_size

    def init_params(self, seed: int = 0) -> np.ndarray:
        return np.zeros(self.n_params)

    def describe(self) -> dict:
        return {"backend": self.backend, "vocab_size": self.vocab_size, "order": self.order,
                "window": self.window}

    def table(self, theta: np.ndarray) -> np.ndarray:
        return theta.reshape(self.n_rows, self.vocab_size)

    def row(self, context) -> int:
        ctx = list(context)[-self.order:] if self.order else []
        ctx = [0] * (self.order - len(ctx)) + ctx
        r = 0
        for t in ctx:
            r = r * self.vocab_size + int(t)
        return r

    def _rows(self, tokens: np.ndarray) -> np.ndarray:
        """Row index for predicting ``tokens[:, s]``, ``s = 1..L-1``."""
        B, L = tokens.shape
        padded = np.concatenate([np.zeros((B, self.order), dtype=np.int64), tokens], axis=1)
        rows = np.zeros((B, L - 1), dtype=np.int64)
        for j in range(self.order):
            # context token j of the window ending just before position s
            rows = rows * self.vocab_size + padded[:, 1 + j: L + j]
        return rows

    def logits_all(self, theta, tokens):
        tokens = np.asarray(tokens, dtype=np.int64)
        return self.table(theta)[self._rows(tokens)]

    def forward_backward(self, theta, tokens, weights, coef=None):
        tokens = np.asarray(tokens, dtype=np.int64)
        weights = np.asarray(weights, dtype=np.float64)
        rows = self._rows(tokens)
        ls = log_softmax(self.table(theta)[rows])
        tgt = tokens[:, 1:]
        w = weights[:, 1:]
        picked = np.take_along_axis(ls, tgt[..., None], axis=-1)[..., 0]
        per_seq = (w * picked).sum(axis=1)
        c = np.ones(len(tokens)) if coef is None else np.asarray(coef(per_seq), dtype=np.float64)
        cw = w * c[:, None]
        g_rows = -np.exp(ls) * cw[..., None]
        np.put_along_axis(g_rows, tgt[..., None],
                          np.take_along_axis(g_rows, tgt[..., None], axis=-1) + cw[..., None], axis=-1)
        grad = np.zeros((self.n_rows, self.vocab_size))
        np.add.at(grad, rows.reshape(-1), g_rows.reshape(-1, self.vocab_size))
        return per_seq, grad.reshape(-1)

    def next_logits(self, theta, context):
        self.check_context(context)
        return self.table(theta)[self.row(context)].copy()

    def grad_log_prob(self, theta, context, token):
        self.check_context(context)
        r = self.row(context)
        g = np.zeros((self.n_rows, self.vocab_size))
        g[r] = -softmax(self.table(theta)[r])
        g[r, token] += 1.0
        return g.reshape(-1)

    def decoder(self, theta, batch):
        return _TabularDecoder(self, theta, batch)


class _TabularDecoder(Decoder):
    def __init__(self, model: TabularModel, theta, batch):
        self.model = model
        self.table = model.table(theta)
        self.rows = np.zeros(batch, dtype=np.int64)

    def feed(self, tokens):
        m = self.model
        if m.order:
            self.rows = (self.rows * m.vocab_size) % m.n_rows + np.asarray(tokens, dtype=np.int64)
        return self.table[self.rows]
