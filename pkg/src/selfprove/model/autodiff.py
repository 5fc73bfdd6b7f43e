"""A small reverse-mode differentiation tape over numpy arrays.

Arrays may be float64 or float32; ops keep the dtype of their inputs. Each
``Tensor`` records its parents and a closure that pushes its gradient to
them. ``backward`` walks the graph in reverse topological order. Only the ops
the sequence models need are provided; the heavier ones (layer norm, masked
softmax, log-softmax likelihood) are fused with hand-written adjoints.
"""
from __future__ import annotations

import numpy as np


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


_FLOATS = (np.dtype(np.float32), np.dtype(np.float64))


class Tensor:
    __slots__ = ("data", "grad", "parents", "backward_fn", "_owned")

    def __init__(self, data, parents=(), backward_fn=None):
        data = np.asarray(data)
        self.data = data if data.dtype in _FLOATS else data.astype(np.float64)
        self.grad = None
        self.parents = parents
        self.backward_fn = backward_fn
        self._owned = False

    @property
    def shape(self):
        return self.data.shape

    def _acc(self, g, owned=False):
        """Accumulate ``g``; ``owned`` means ``g`` is a fresh array nobody else holds.

        A borrowed ``g`` is kept by reference and only copied if a second
        contribution arrives, so single-consumer chains never copy.
        """
        if self.grad is None:
            self.grad, self._owned = g, owned
        elif self._owned:
            self.grad += g
        else:
            self.grad, self._owned = self.grad + g, True

    def backward(self, seed=None):
        order, seen = [], set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node.parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data) if seed is None else np.asarray(seed, dtype=np.float64)
        for node in reversed(order):
            if node.backward_fn is not None and node.grad is not None:
                node.backward_fn(node.grad)

    # arithmetic ---------------------------------------------------------------
    def __add__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(other)
        out = Tensor(self.data + other.data, (self, other))

        def bw(g):
            self._acc(_unbroadcast(g, self.shape))
            other._acc(_unbroadcast(g, other.shape))
        out.backward_fn = bw
        return out

    def __mul__(self, other):
        if not isinstance(other, Tensor):
            c = np.asarray(other, dtype=self.data.dtype)
            out = Tensor(self.data * c, (self,))
            out.backward_fn = lambda g: self._acc(_unbroadcast(g * c, self.shape))
            return out
        out = Tensor(self.data * other.data, (self, other))

        def bw(g):
            self._acc(_unbroadcast(g * other.data, self.shape))
            other._acc(_unbroadcast(g * self.data, other.shape))
        out.backward_fn = bw
        return out

    def __matmul__(self, other):
        if other.data.ndim == 2 and self.data.ndim > 2:
            return _matmul_weight(self, other)
        out = Tensor(self.data @ other.data, (self, other))

        def bw(g):
            ga = g @ np.swapaxes(other.data, -1, -2)
            gb = np.swapaxes(self.data, -1, -2) @ g
            self._acc(_unbroadcast(ga, self.shape), owned=True)
            other._acc(_unbroadcast(gb, other.shape), owned=True)
        out.backward_fn = bw
        return out

    def reshape(self, *shape):
        out = Tensor(self.data.reshape(*shape), (self,))
        out.backward_fn = lambda g: self._acc(g.reshape(self.shape))
        return out

    def transpose(self, *axes):
        inv = np.argsort(axes)
        out = Tensor(self.data.transpose(*axes), (self,))
        out.backward_fn = lambda g: self._acc(g.transpose(*inv))
        return out

    def sum(self):
        out = Tensor(self.data.sum(), (self,))
        out.backward_fn = lambda g: self._acc(np.broadcast_to(g, self.shape))
        return out

    def __getitem__(self, idx):
        """Basic (int/slice) indexing only."""
        out = Tensor(self.data[idx], (self,))

        def bw(g):
            full = np.zeros_like(self.data)
            full[idx] += g
            self._acc(full, owned=True)
        out.backward_fn = bw
        return out

    def __repr__(self):
        return f"Tensor(shape={self.shape})"


def _matmul_weight(x: Tensor, w: Tensor) -> Tensor:
    """``(..., n) @ (n, m)`` computed as one 2-D product."""
    lead = x.shape[:-1]
    x2 = x.data.reshape(-1, x.shape[-1])
    out = Tensor((x2 @ w.data).reshape(*lead, w.shape[1]), (x, w))

    def bw(g):
        g2 = g.reshape(-1, w.shape[1])
        x._acc((g2 @ w.data.T).reshape(x.shape), owned=True)
        w._acc(x2.T @ g2, owned=True)
    out.backward_fn = bw
    return out


def tanh(x: Tensor) -> Tensor:
    t = np.tanh(x.data)
    out = Tensor(t, (x,))
    out.backward_fn = lambda g: x._acc(g * (1.0 - t * t))
    return out


def exp(x: Tensor) -> Tensor:
    e = np.exp(x.data)
    out = Tensor(e, (x,))
    out.backward_fn = lambda g: x._acc(g * e)
    return out


def log(x: Tensor) -> Tensor:
    out = Tensor(np.log(x.data), (x,))
    out.backward_fn = lambda g: x._acc(g / x.data)
    return out


_GELU_C = float(np.sqrt(2.0 / np.pi))


def gelu(x: Tensor) -> Tensor:
    """Tanh-approximated GELU (smooth everywhere)."""
    a = x.data
    a2 = a * a
    t = a2 * 0.044715
    t += 1.0
    t *= a
    t *= _GELU_C
    np.tanh(t, out=t)
    y = t + 1.0
    y *= a
    y *= 0.5
    out = Tensor(y, (x,))

    def bw(g):
        # d/da = 0.5 (1 + t) + 0.5 a (1 - t^2) C (1 + 3 * 0.044715 a^2)
        du = a2 * (3 * 0.044715)
        du += 1.0
        du *= _GELU_C
        du *= a
        s = t * t
        np.subtract(1.0, s, out=s)
        du *= s
        du += t
        du += 1.0
        du *= 0.5
        du *= g
        x._acc(du, owned=True)
    out.backward_fn = bw
    return out


def embedding(table: Tensor, idx: np.ndarray) -> Tensor:
    out = Tensor(table.data[idx], (table,))

    def bw(g):
        full = np.zeros_like(table.data)
        np.add.at(full, idx.reshape(-1), g.reshape(-1, table.shape[-1]))
        table._acc(full, owned=True)
    out.backward_fn = bw
    return out


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = Tensor(xhat * gain.data + bias.data, (x, gain, bias))

    def bw(g):
        gain._acc(_unbroadcast(g * xhat, gain.shape))
        bias._acc(_unbroadcast(g, bias.shape))
        gx = g * gain.data
        n = x.shape[-1]
        x._acc(inv / n * (n * gx - gx.sum(-1, keepdims=True)
                          - xhat * (gx * xhat).sum(-1, keepdims=True)), owned=True)
    out.backward_fn = bw
    return out


def masked_softmax(x: Tensor, mask: np.ndarray) -> Tensor:
    """Softmax over the last axis; positions where ``mask`` is False get probability 0."""
    z = np.where(mask, x.data, -np.inf)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(p, (x,))
    out.backward_fn = lambda g: x._acc(p * (g - (g * p).sum(-1, keepdims=True)), owned=True)
    return out


def log_softmax(x: Tensor) -> Tensor:
    z = x.data - x.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    ls = z - lse
    out = Tensor(ls, (x,))
    out.backward_fn = lambda g: x._acc(g - np.exp(ls) * g.sum(-1, keepdims=True))
    return out


def weighted_log_likelihood(logits: Tensor, targets: np.ndarray, weights: np.ndarray) -> Tensor:
    """``sum_i weights[i] * log softmax(logits[i])[targets[i]]`` over all leading axes."""
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    ls = z - lse
    picked = np.take_along_axis(ls, targets[..., None], axis=-1)[..., 0]
    out = Tensor(float((weights * picked).sum()), (logits,))

    def bw(g):
        w = weights.astype(ls.dtype, copy=False)[..., None]
        grad = np.exp(ls)
        grad *= -w
        np.put_along_axis(grad, targets[..., None],
                          np.take_along_axis(grad, targets[..., None], axis=-1) + w, axis=-1)
        grad *= float(g)
        logits._acc(grad, owned=True)
    out.backward_fn = bw
    return out
