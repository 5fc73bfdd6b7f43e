"""Transcript Learning, RLVF, generic stochastic gradient ascent, and the training loop.

All updates are ascent steps on a log-likelihood-shaped objective: TL pushes up
the probability of honest transcripts, RLVF pushes up the probability of the
model's own accepted transcripts.
"""
from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .model import AutoregressiveModel, StopRule, generate_batch
from .proof_system import Transcript, Verifier, verifier_decide, verifier_query

log = logging.getLogger(__name__)

MODES = ("tl", "tl-faithful", "rlvf", "sga")
METRICS_HEADER = ("iter", "loss", "accept_rate", "correctness", "verifiability")
BATCH_STREAM = 3


class TrainingDiverged(FloatingPointError):
    """A non-finite loss or gradient; carries the offending batch index."""

    def __init__(self, iteration: int, what: str):
        super().__init__(f"non-finite {what} at batch {iteration}")
        self.iteration = iteration
        self.what = what


class UnboundedStep(RuntimeError):
    """An SGA estimator returned a vector above the configured norm bound."""


@dataclass
class TrainConfig:
    mode: str = "tl"
    lr: float = 1e-3
    iters: int = 1000
    batch: int = 64
    iterate: str = "last"  # or "average"
    seed: int = 0
    optimizer: str = "adam"  # or "sgd"
    betas: tuple[float, float] = (0.9, 0.98)
    weight_decay: float = 0.0
    grad_clip: float | None = 1.0
    warmup: int = 0
    temperature: float = 1.0
    eval_every: int | None = None  # default: iters // 100
    eval_size: int = 200

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; expected one of {', '.join(MODES)}")
        if not self.lr > 0:
            raise ValueError("learning rate must be positive")
        if self.iters < 1 or self.batch < 1:
            raise ValueError("iters and batch must be >= 1")
        if self.iterate not in ("last", "average"):
            raise ValueError("iterate must be 'last' or 'average'")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError("optimizer must be 'adam' or 'sgd'")

    @property
    def interval(self) -> int:
        return self.eval_every or max(1, self.iters // 100)


@dataclass
class UpdateRecord:
    iteration: int
    weight: float
    norm: float
    accepted: bool
    loss: float = float("nan")


# ---------------------------------------------------------------------------- TL

def log_alpha_product(per_seq_loglik: np.ndarray) -> np.ndarray:
    """``log prod_s alpha_s`` is just the summed log-likelihood; kept separate for clarity."""
    return np.asarray(per_seq_loglik, dtype=np.float64)


def tl_direction(model: AutoregressiveModel, theta: np.ndarray, tokens: np.ndarray,
                 weights: np.ndarray, faithful: bool) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Mean TL update direction over a batch of honest transcripts.

    Faithful mode scales example ``b`` by ``prod_s alpha_s``, accumulated as a sum of
    log-probabilities and exponentiated only at the end. Returns
    ``(direction, example_weights, per_example_loglik)``.
    """
    tokens = np.atleast_2d(tokens)
    weights = np.atleast_2d(weights)
    n = len(tokens)
    if faithful:
        coef = lambda ll: np.exp(log_alpha_product(ll)) / n  # noqa: E731
    else:
        coef = lambda ll: np.full(len(ll), 1.0 / n)  # noqa: E731
    ll, g = model.forward_backward(theta, tokens, weights, coef)
    w = np.exp(ll) if faithful else np.ones(n)
    return g, w, ll


def tl_step(model: AutoregressiveModel, theta: np.ndarray, tokens, weights, lr: float,
            mode: str = "tl-faithful", iteration: int = 0) -> tuple[np.ndarray, UpdateRecord]:
    """One plain-SGA TL step on one example (or the mean over a batch)."""
    if mode not in ("tl", "tl-faithful"):
        raise ValueError(f"tl_step needs a TL mode, got {mode!r}")
    d, w, ll = tl_direction(model, theta, tokens, weights, mode == "tl-faithful")
    norm = float(np.linalg.norm(d))
    if not np.isfinite(norm):
        raise TrainingDiverged(iteration, "gradient")
    rec = UpdateRecord(iteration, float(w.mean()), norm, True, float(-ll.mean()))
    return theta + lr * d, rec


# -------------------------------------------------------------------------- RLVF

@dataclass
class Rollout:
    transcript: Transcript
    tokens: list[int]
    prover_mask: list[bool]
    accepted: bool
    truncated: bool


def prover_layout(verifier: Verifier, t: Transcript) -> tuple[list[int], list[bool]]:
    """The model-facing tokens of ``t`` and which of them the prover wrote."""
    toks = verifier.layout(t)
    n_in = len(t.input)
    mask = [False] * n_in + [True] * (len(toks) - n_in)
    # Queries are verifier tokens; mark them out wherever the layout includes them.
    bare = Transcript(t.input, t.y, tuple(((), a) for _, a in t.rounds))
    if len(verifier.layout(bare)) != len(toks):
        pos = n_in + len(t.y)
        for q, a in t.rounds:
            for j in range(len(q)):
                mask[pos + j] = False
            pos += len(q) + len(a)
    return toks, mask


def rollout(model: AutoregressiveModel, theta: np.ndarray, verifier: Verifier,
            inputs: Sequence[Sequence[int]], rng, greedy: bool = False,
            temperature: float = 1.0) -> list[Rollout]:
    """Let the model play prover against ``verifier`` on every input.

    Truncated generations and anything that fails to decode are rejections.
    """
    n = len(inputs)
    outs = generate_batch(model, theta, [list(x) for x in inputs], verifier.output_stop(),
                          rng, greedy, temperature)
    ys = [tuple(g.tokens) for g in outs]
    truncated = [g.truncated for g in outs]
    rounds: list[list] = [[] for _ in range(n)]
    for _ in range(verifier.rounds):
        qs = [verifier_query(verifier, inputs[b], ys[b], rounds[b], rng) for b in range(n)]
        prompts = [verifier.layout(Transcript(tuple(inputs[b]), ys[b], tuple(rounds[b]) + ((qs[b], ()),)))
                   for b in range(n)]
        gens = generate_batch(model, theta, prompts, verifier.answer_stop(), rng, greedy, temperature)
        for b, g in enumerate(gens):
            rounds[b].append((qs[b], tuple(g.tokens)))
            truncated[b] = truncated[b] or g.truncated
    result = []
    for b in range(n):
        t = Transcript(tuple(inputs[b]), ys[b], tuple(rounds[b]))
        ok = (not truncated[b]) and verifier_decide(verifier, t, rng)
        toks, mask = prover_layout(verifier, t)
        result.append(Rollout(t, toks, mask, ok, truncated[b]))
    return result


def rlvf_direction(model: AutoregressiveModel, theta: np.ndarray, rollouts: Sequence[Rollout],
                   fill: int = 0) -> tuple[np.ndarray, int]:
    """Mean of ``Acc * sum_s d_s`` over the batch; backward runs on accepted rollouts only."""
    acc = [r for r in rollouts if r.accepted]
    if not acc:
        return np.zeros(model.n_params), 0
    L = max(len(r.tokens) for r in acc)
    toks = np.full((len(acc), L), fill, dtype=np.int64)
    w = np.zeros((len(acc), L))
    for i, r in enumerate(acc):
        toks[i, :len(r.tokens)] = r.tokens
        w[i, :len(r.tokens)] = r.prover_mask
    n = len(rollouts)
    _, g = model.forward_backward(theta, toks, w, lambda ll: np.full(len(ll), 1.0 / n))
    return g, len(acc)


def rlvf_step(model: AutoregressiveModel, theta: np.ndarray, x: Sequence[int], verifier: Verifier,
              lr: float, rng, iteration: int = 0) -> tuple[np.ndarray, UpdateRecord]:
    """Alg. 2 for a single input: roll out, and move only if the verifier accepts."""
    r = rollout(model, theta, verifier, [x], rng)[0]
    if not r.accepted:
        return theta, UpdateRecord(iteration, 0.0, 0.0, False)
    d, _ = rlvf_direction(model, theta, [r])
    norm = float(np.linalg.norm(d))
    if not np.isfinite(norm):
        raise TrainingDiverged(iteration, "gradient")
    return theta + lr * d, UpdateRecord(iteration, 1.0, norm, True)


# --------------------------------------------------------------------------- SGA

def sga_run(estimator: Callable[[np.ndarray, np.random.Generator], np.ndarray], lr: float, n: int,
            seed: int, dim: int = 1, bound: float | None = None,
            norm: Callable[[np.ndarray], float] = np.linalg.norm) -> np.ndarray:
    """Plain stochastic gradient ascent from zero; returns the average of ``theta_1..theta_N``.

    Aborts if an estimate's ``norm`` exceeds ``bound``.
    """
    if n < 1:
        raise ValueError("N must be >= 1")
    rng = np.random.default_rng(seed)
    theta = np.zeros(dim)
    total = np.zeros(dim)
    for i in range(n):
        v = np.asarray(estimator(theta, rng), dtype=np.float64)
        if bound is not None and norm(v) > bound:
            raise UnboundedStep(f"step {i + 1}: estimator norm {norm(v):.3g} exceeds {bound:.3g}")
        theta = theta + lr * v
        total += theta
    return total / n


# --------------------------------------------------------------------- optimizers

class Optimizer:
    """Ascent optimizer over a flat vector: ``step(theta, direction)`` returns new theta."""

    def __init__(self, cfg: TrainConfig, dim: int):
        self.cfg = cfg
        self.t = 0
        if cfg.optimizer == "adam":
            self.m = np.zeros(dim)
            self.v = np.zeros(dim)

    def rate(self) -> float:
        w = self.cfg.warmup
        return self.cfg.lr * min(1.0, (self.t + 1) / w) if w else self.cfg.lr

    def step(self, theta: np.ndarray, d: np.ndarray) -> np.ndarray:
        cfg = self.cfg
        lr = self.rate()
        self.t += 1
        if cfg.grad_clip is not None:
            norm = np.linalg.norm(d)
            if norm > cfg.grad_clip:
                d = d * (cfg.grad_clip / norm)
        if cfg.optimizer == "sgd":
            return theta + lr * d
        b1, b2 = cfg.betas
        self.m = b1 * self.m + (1 - b1) * d
        self.v = b2 * self.v + (1 - b2) * d * d
        mh = self.m / (1 - b1 ** self.t)
        vh = self.v / (1 - b2 ** self.t)
        out = theta + lr * mh / (np.sqrt(vh) + 1e-8)
        if cfg.weight_decay:
            out -= lr * cfg.weight_decay * theta
        return out


# ---------------------------------------------------------------------- the loop

@dataclass
class MetricsRow:
    iter: int
    loss: float
    accept_rate: float
    correctness: float
    verifiability: float

    def values(self) -> list:
        return [self.iter] + [_fmt(v) for v in (self.loss, self.accept_rate, self.correctness,
                                                 self.verifiability)]


def _fmt(v: float) -> str:
    return "" if v is None or (isinstance(v, float) and math.isnan(v)) else f"{v:.6g}"


@dataclass
class TrainResult:
    theta: np.ndarray
    metrics: list[MetricsRow]
    records: list[UpdateRecord] = field(default_factory=list, repr=False)
    seconds: float = 0.0


class MetricsWriter:
    def __init__(self, path: str | Path | None):
        self.path = Path(path) if path is not None else None
        if self.path is not None:
            try:
                with open(self.path, "w", newline="") as f:
                    csv.writer(f).writerow(METRICS_HEADER)
            except OSError as e:
                raise OSError(f"cannot write metrics {self.path}: {e}") from e

    def write(self, row: MetricsRow) -> None:
        if self.path is not None:
            with open(self.path, "a", newline="") as f:
                csv.writer(f).writerow(row.values())


def train(cfg: TrainConfig, model: AutoregressiveModel, verifier: Verifier, *,
          dataset=None, sampler: Callable[[np.random.Generator, int], list[Sequence[int]]] | None = None,
          theta0: np.ndarray | None = None,
          evaluator: Callable[[np.ndarray], tuple[float, float]] | None = None,
          metrics_path: str | Path | None = None,
          on_eval: Callable[[int, np.ndarray, MetricsRow], None] | None = None) -> TrainResult:
    """Run ``cfg.iters`` batched TL or RLVF updates.

    TL reads honest transcripts from ``dataset`` (anything with ``tokens`` and
    ``masks()``); RLVF draws encoded inputs from ``sampler(rng, batch)``. Every
    ``cfg.interval`` iterations, and after the last one, ``evaluator(theta)`` gives
    held-out ``(correctness, verifiability)`` for the metrics row.
    """
    if cfg.mode == "sga":
        raise ValueError("use sga_run for the generic SGA mode")
    tl = cfg.mode in ("tl", "tl-faithful")
    if tl and dataset is None:
        raise ValueError("TL needs a dataset of honest transcripts")
    if not tl and sampler is None:
        raise ValueError("RLVF needs an input sampler")
    rng = np.random.default_rng([cfg.seed, BATCH_STREAM])
    theta = model.init_params(cfg.seed) if theta0 is None else np.array(theta0, dtype=np.float64)
    avg = np.zeros_like(theta) if cfg.iterate == "average" else None
    opt = Optimizer(cfg, len(theta))
    writer = MetricsWriter(metrics_path)
    if tl:
        tokens = np.asarray(dataset.tokens)
        weights = dataset.masks().astype(np.float64)
        n_tokens = max(1.0, weights.sum(axis=1).mean())
        # Positions after the last weighted token never influence the objective (causal
        # model), so each batch is cut to its longest example.
        last = np.where(weights.any(axis=1), weights.shape[1] - np.argmax(weights[:, ::-1] > 0, axis=1), 1)
    metrics: list[MetricsRow] = []
    records: list[UpdateRecord] = []
    window_loss, window_acc, window_n = 0.0, 0, 0
    start = time.perf_counter()
    for it in range(1, cfg.iters + 1):
        if tl:
            idx = rng.integers(0, len(tokens), cfg.batch)
            L = int(last[idx].max())
            d, w, ll = tl_direction(model, theta, tokens[idx, :L], weights[idx, :L],
                                    cfg.mode == "tl-faithful")
            loss = float(-ll.mean() / n_tokens)
            if not np.isfinite(loss):
                raise TrainingDiverged(it, "loss")
            rec = UpdateRecord(it, float(w.mean()), float(np.linalg.norm(d)), True, loss)
            window_loss += loss
            window_n += 1
        else:
            rolls = rollout(model, theta, verifier, sampler(rng, cfg.batch), rng,
                            temperature=cfg.temperature)
            d, n_acc = rlvf_direction(model, theta, rolls)
            rec = UpdateRecord(it, n_acc / len(rolls), float(np.linalg.norm(d)), n_acc > 0)
            window_acc += n_acc
            window_n += len(rolls)
        if not np.isfinite(rec.norm):
            raise TrainingDiverged(it, "gradient")
        if rec.accepted:
            theta = opt.step(theta, d)
        if avg is not None:
            avg += (theta - avg) / it
        records.append(rec)
        if it % cfg.interval == 0 or it == cfg.iters:
            current = avg if avg is not None else theta
            corr, ver = evaluator(current) if evaluator is not None else (float("nan"),) * 2
            row = MetricsRow(it, window_loss / window_n if tl else float("nan"),
                             float("nan") if tl else window_acc / max(1, window_n), corr, ver)
            metrics.append(row)
            writer.write(row)
            if on_eval is not None:
                on_eval(it, current, row)
            log.info("iter %d loss %s accept %s corr %s ver %s", it, *row.values()[1:])
            window_loss, window_acc, window_n = 0.0, 0, 0
    final = avg if avg is not None else theta
    return TrainResult(final, metrics, records, time.perf_counter() - start)
