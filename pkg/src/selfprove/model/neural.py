"""A small causal transformer on the in-repo autodiff tape."""
from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .base import AutoregressiveModel, Decoder, ParamLayout

INIT_STD = 0.02


class TransformerModel(AutoregressiveModel):
    """Pre-norm decoder-only transformer with learned positions and tanh-GELU MLPs.

    ``dtype`` sets the arithmetic of forward and backward passes. Parameters,
    gradients and returned log-probabilities are float64 either way; float32
    roughly halves the cost of a step and is meant for long training runs.
    """

    backend = "neural"

    def __init__(self, vocab_size: int, window: int, width: int = 64, layers: int = 2,
                 heads: int = 4, mlp_ratio: int = 4, dtype: str = "float64"):
        if width % heads:
            raise ValueError("width must be divisible by heads")
        if dtype not in ("float32", "float64"):
            raise ValueError(f"dtype must be float32 or float64, got {dtype!r}")
        self.dtype = np.dtype(dtype)
        self.vocab_size = vocab_size
        self.window = window
        self.width = width
        self.layers = layers
        self.heads = heads
        self.mlp = mlp_ratio * width
        D, V = width, vocab_size
        shapes = [("tok", (V, D)), ("pos", (window, D))]
        for i in range(layers):
            shapes += [(f"{i}.ln1.g", (D,)), (f"{i}.ln1.b", (D,)),
                       (f"{i}.qkv.w", (D, 3 * D)), (f"{i}.qkv.b", (3 * D,)),
                       (f"{i}.proj.w", (D, D)), (f"{i}.proj.b", (D,)),
                       (f"{i}.ln2.g", (D,)), (f"{i}.ln2.b", (D,)),
                       (f"{i}.fc.w", (D, self.mlp)), (f"{i}.fc.b", (self.mlp,)),
                       (f"{i}.out.w", (self.mlp, D)), (f"{i}.out.b", (D,))]
        shapes += [("lnf.g", (D,)), ("lnf.b", (D,)), ("head.w", (D, V)), ("head.b", (V,))]
        self.layout = ParamLayout(tuple(shapes))

    @property
    def n_params(self) -> int:
        return self.layout.size

    def describe(self) -> dict:
        return {"backend": self.backend, "vocab_size": self.vocab_size, "window": self.window,
                "width": self.width, "layers": self.layers, "heads": self.heads,
                "mlp_ratio": self.mlp // self.width, "dtype": self.dtype.name}

    def init_params(self, seed: int = 0) -> np.ndarray:
        rng = np.random.default_rng(seed)
        parts = {}
        for name, shape in self.layout.shapes:
            if name.endswith(".g"):
                parts[name] = np.ones(shape)
            elif name.endswith(".b"):
                parts[name] = np.zeros(shape)
            else:
                std = INIT_STD
                if name.endswith("proj.w") or name.endswith("out.w"):
                    std = INIT_STD / np.sqrt(2 * self.layers)
                parts[name] = rng.normal(0.0, std, shape)
        return self.layout.flatten(parts)

    # training path (taped) -------------------------------------------------------
    def _forward(self, theta: np.ndarray, tokens: np.ndarray):
        B, L = tokens.shape
        if L > self.window:
            raise ValueError(f"sequence of length {L} exceeds window {self.window}")
        views = self.layout.unflatten(theta)
        P = {name: ad.Tensor(v.astype(self.dtype, copy=False)) for name, v in views.items()}
        D, H = self.width, self.heads
        dh = D // H
        causal = np.tril(np.ones((L, L), dtype=bool))
        x = ad.embedding(P["tok"], tokens) + P["pos"][:L]
        for i in range(self.layers):
            h = ad.layer_norm(x, P[f"{i}.ln1.g"], P[f"{i}.ln1.b"])
            qkv = (h @ P[f"{i}.qkv.w"] + P[f"{i}.qkv.b"]).reshape(B, L, 3, H, dh)
            qkv = qkv.transpose(2, 0, 3, 1, 4)  # (3, B, H, L, dh)
            q, k, v = qkv[0], qkv[1], qkv[2]
            att = (q @ k.transpose(0, 1, 3, 2)) * (1.0 / dh ** 0.5)
            att = ad.masked_softmax(att, causal)
            o = (att @ v).transpose(0, 2, 1, 3).reshape(B, L, D)
            x = x + (o @ P[f"{i}.proj.w"] + P[f"{i}.proj.b"])
            h = ad.layer_norm(x, P[f"{i}.ln2.g"], P[f"{i}.ln2.b"])
            h = ad.gelu(h @ P[f"{i}.fc.w"] + P[f"{i}.fc.b"])
            x = x + (h @ P[f"{i}.out.w"] + P[f"{i}.out.b"])
        x = ad.layer_norm(x, P["lnf.g"], P["lnf.b"])
        logits = x @ P["head.w"] + P["head.b"]
        return logits, P

    def _collect(self, P) -> np.ndarray:
        return np.concatenate([
            (P[name].grad if P[name].grad is not None else np.zeros(shape)).reshape(-1)
            for name, shape in self.layout.shapes]).astype(np.float64, copy=False)

    def logits_all(self, theta, tokens):
        tokens = np.asarray(tokens, dtype=np.int64)
        logits, _ = self._forward(theta, tokens[:, :-1])
        return logits.data.astype(np.float64, copy=False)

    def forward_backward(self, theta, tokens, weights, coef=None):
        tokens = np.asarray(tokens, dtype=np.int64)
        weights = np.asarray(weights, dtype=np.float64)
        logits, P = self._forward(theta, tokens[:, :-1])
        tgt, w = tokens[:, 1:], weights[:, 1:]
        z = logits.data.astype(np.float64)
        z -= z.max(axis=-1, keepdims=True)
        ls = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
        per_seq = (w * np.take_along_axis(ls, tgt[..., None], axis=-1)[..., 0]).sum(axis=1)
        c = np.ones(len(tokens)) if coef is None else np.asarray(coef(per_seq), dtype=np.float64)
        cw = w * c[:, None]
        if not cw.any():
            return per_seq, np.zeros(self.n_params)
        ad.weighted_log_likelihood(logits, tgt, cw).backward()
        return per_seq, self._collect(P)

    def decoder(self, theta, batch):
        return _KVDecoder(self, theta, batch)


def _layer_norm(x, g, b, eps=1e-5):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    return xc / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps) * g + b


def _gelu(a):
    return 0.5 * a * (1.0 + np.tanh(ad._GELU_C * a * (1.0 + 0.044715 * a * a)))


class _KVDecoder(Decoder):
    """Untaped incremental forward with cached keys and values."""

    def __init__(self, model: TransformerModel, theta, batch):
        self.m = model
        self.p = {k: v.astype(model.dtype, copy=False) for k, v in model.layout.unflatten(theta).items()}
        H, dh = model.heads, model.width // model.heads
        self.k = np.zeros((model.layers, batch, H, model.window, dh), dtype=model.dtype)
        self.v = np.zeros_like(self.k)
        self.t = 0

    def feed(self, tokens):
        m, p, t = self.m, self.p, self.t
        if t >= m.window:
            raise ValueError("decoder window exhausted")
        B = len(tokens)
        D, H = m.width, m.heads
        dh = D // H
        x = p["tok"][np.asarray(tokens, dtype=np.int64)] + p["pos"][t]
        for i in range(m.layers):
            h = _layer_norm(x, p[f"{i}.ln1.g"], p[f"{i}.ln1.b"])
            qkv = (h @ p[f"{i}.qkv.w"] + p[f"{i}.qkv.b"]).reshape(B, 3, H, dh)
            self.k[i, :, :, t] = qkv[:, 1]
            self.v[i, :, :, t] = qkv[:, 2]
            K, Vv = self.k[i, :, :, :t + 1], self.v[i, :, :, :t + 1]
            s = np.einsum("bhd,bhtd->bht", qkv[:, 0], K) * (1.0 / dh ** 0.5)
            s = np.exp(s - s.max(axis=-1, keepdims=True))
            s /= s.sum(axis=-1, keepdims=True)
            o = np.einsum("bht,bhtd->bhd", s, Vv).reshape(B, D)
            x = x + o @ p[f"{i}.proj.w"] + p[f"{i}.proj.b"]
            h = _layer_norm(x, p[f"{i}.ln2.g"], p[f"{i}.ln2.b"])
            x = x + _gelu(h @ p[f"{i}.fc.w"] + p[f"{i}.fc.b"]) @ p[f"{i}.out.w"] + p[f"{i}.out.b"]
        x = _layer_norm(x, p["lnf.g"], p["lnf.b"])
        self.t += 1
        return (x @ p["head.w"] + p["head.b"]).astype(np.float64, copy=False)
