"""Held-out correctness and Verifiability, and the annotation, base and depth studies."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import (LogUniformSampler, RLVF_STREAM, estimate_depth_ceiling, generate_dataset,
                   heldout_inputs, stream_rng)
from .encoding import Vocabulary, omega
from .model import AutoregressiveModel, TransformerModel
from .proof_system import BezoutVerifier, GcdInstance, encode_input, euclidean_depth
from .training import TrainConfig, TrainResult, rollout, train

log = logging.getLogger(__name__)


@dataclass
class EvalReport:
    n: int
    correct: int
    verified: int
    decode_failures: int
    by_depth: dict[int, tuple[int, int]] = field(default_factory=dict)  # depth -> (n, verified)
    seed: int = 0

    @property
    def correctness(self) -> float:
        return self.correct / self.n if self.n else 0.0

    @property
    def verifiability(self) -> float:
        return self.verified / self.n if self.n else 0.0

    def row(self) -> dict:
        return {"n": self.n, "correctness": f"{self.correctness:.6f}",
                "verifiability": f"{self.verifiability:.6f}", "correct": self.correct,
                "verified": self.verified, "decode_failures": self.decode_failures, "seed": self.seed}


EVAL_COLUMNS = ("n", "correctness", "verifiability", "correct", "verified", "decode_failures", "seed")


def evaluate(theta: np.ndarray, model: AutoregressiveModel, verifier: BezoutVerifier,
             inputs: Sequence[GcdInstance], seed: int = 0, chunk: int = 1000) -> EvalReport:
    """Greedy-decode ``y`` and the proof for every input and count what holds up.

    A ``y`` that does not decode, or a generation that runs over its budget, is
    both incorrect and rejected.
    """
    vocab = verifier.vocab
    correct = verified = failures = 0
    by_depth: dict[int, list[int]] = {}
    for lo in range(0, len(inputs), chunk):
        part = inputs[lo:lo + chunk]
        rolls = rollout(model, theta, verifier, [encode_input(i, vocab) for i in part], rng=None,
                        greedy=True)
        for inst, r in zip(part, rolls):
            y = verifier.decode_output(r.transcript.y)
            proof = verifier.decode_proof(r.transcript.rounds[0][1])
            ok_y = y is not None and y == math.gcd(inst.x0, inst.x1)
            correct += ok_y
            verified += r.accepted
            failures += y is None or proof is None or r.truncated
            d = by_depth.setdefault(euclidean_depth(inst), [0, 0])
            d[0] += 1
            d[1] += r.accepted
    return EvalReport(len(inputs), correct, verified, failures,
                      {k: tuple(v) for k, v in sorted(by_depth.items())}, seed)


def write_csv(path: str | Path, columns: Sequence[str], rows: Sequence[dict]) -> None:
    path = Path(path)
    try:
        with open(path, "w", newline="") as f:
            w = csv.DictWriter(f, fieldnames=list(columns))
            w.writeheader()
            for r in rows:
                w.writerow(r)
    except OSError as e:
        raise OSError(f"cannot write {path}: {e}") from e


# ------------------------------------------------------------------ experiments

@dataclass
class ExperimentConfig:
    """Everything one TL run on the GCD task depends on, besides ``T``, ``B`` and the seed."""

    max_value: int = 100
    base: int = 10
    n: int = 5000
    iters: int = 10000
    batch: int = 64
    lr: float = 1e-3
    warmup: int = 200
    weight_decay: float = 0.1
    width: int = 64
    layers: int = 2
    heads: int = 4
    mlp_ratio: int = 4
    dtype: str = "float32"
    heldout: int = 1000
    eval_size: int = 200
    eval_every: int | None = None

    def train_config(self, seed: int, mode: str = "tl") -> TrainConfig:
        return TrainConfig(mode=mode, lr=self.lr, iters=self.iters, batch=self.batch, seed=seed,
                           warmup=self.warmup, weight_decay=self.weight_decay,
                           eval_every=self.eval_every, eval_size=self.eval_size)

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class Experiment:
    model: TransformerModel
    verifier: BezoutVerifier
    heldout: list[GcdInstance]
    dataset: object
    result: TrainResult | None = None
    report: EvalReport | None = None


def prepare(cfg: ExperimentConfig, cutoff: int, seed: int, base: int | None = None) -> Experiment:
    base = cfg.base if base is None else base
    ds = generate_dataset(cfg.max_value, base, cutoff, cfg.n, seed)
    vocab = Vocabulary(base, cutoff)
    held = heldout_inputs(cfg.max_value, cfg.heldout, seed, ds.pairs())
    model = TransformerModel(len(vocab), ds.length, width=cfg.width, layers=cfg.layers,
                             heads=cfg.heads, mlp_ratio=cfg.mlp_ratio, dtype=cfg.dtype)
    return Experiment(model, BezoutVerifier(vocab, cfg.max_value), held, ds)


def run_tl(cfg: ExperimentConfig, cutoff: int, seed: int, base: int | None = None,
           metrics_path=None) -> Experiment:
    """Train with cross-entropy TL, then evaluate on the held-out inputs."""
    ex = prepare(cfg, cutoff, seed, base)
    probe = ex.heldout[:cfg.eval_size]

    def evaluator(theta):
        r = evaluate(theta, ex.model, ex.verifier, probe)
        return r.correctness, r.verifiability

    ex.result = train(cfg.train_config(seed), ex.model, ex.verifier, dataset=ex.dataset,
                      evaluator=evaluator, metrics_path=metrics_path)
    ex.report = evaluate(ex.result.theta, ex.model, ex.verifier, ex.heldout, seed)
    return ex


def rlvf_sampler(max_value: int, vocab: Vocabulary, exclude=()):
    """Log-uniform encoded inputs for RLVF, skipping ``exclude`` (the held-out pairs)."""
    sampler = LogUniformSampler(max_value)
    exclude = set(exclude)

    def draw(rng, n):
        out = []
        while len(out) < n:
            for a, b in sampler.draw_pairs(rng, n).tolist():
                if (a, b) not in exclude and len(out) < n:
                    out.append(encode_input(GcdInstance(a, b), vocab))
        return out
    return draw


def rlvf_rng(seed: int):
    return stream_rng(seed, RLVF_STREAM)


def mean_stderr(values: Sequence[float]) -> tuple[float, float]:
    v = np.asarray(values, dtype=np.float64)
    if len(v) < 2:
        return float(v.mean()) if len(v) else float("nan"), float("nan")
    return float(v.mean()), float(v.std(ddof=1) / np.sqrt(len(v)))


ANNOTATION_COLUMNS = ("cutoff", "seeds", "verifiability_mean", "verifiability_stderr",
                      "correctness_mean", "depth_ceiling")
BASE_COLUMNS = ("omega", "bases", "runs", "verifiability_mean", "verifiability_stderr")
DEPTH_COLUMNS = ("depth", "count", "fraction", "cumulative")


def ablation_annotation(cutoffs: Sequence[int], cfg: ExperimentConfig, seeds: Sequence[int],
                        depth_samples: int = 100_000) -> list[dict]:
    """One TL run per ``(T, seed)`` at a shared budget; mean and standard error per ``T``."""
    rows = []
    for T in cutoffs:
        reports = [run_tl(cfg, T, s).report for s in seeds]
        vm, vs = mean_stderr([r.verifiability for r in reports])
        cm, _ = mean_stderr([r.correctness for r in reports])
        rows.append({"cutoff": T, "seeds": len(seeds), "verifiability_mean": f"{vm:.6f}",
                     "verifiability_stderr": f"{vs:.6f}", "correctness_mean": f"{cm:.6f}",
                     "depth_ceiling": f"{estimate_depth_ceiling(cfg.max_value, T, depth_samples, 0):.6f}"})
        log.info("T=%d verifiability %.4f +- %.4f", T, vm, vs)
    return rows


def group_by_omega(bases: Sequence[int]) -> dict[int, list[int]]:
    groups: dict[int, list[int]] = {}
    for b in bases:
        groups.setdefault(omega(b), []).append(b)
    return dict(sorted(groups.items()))


def ablation_base(bases: Sequence[int], cfg: ExperimentConfig, seeds: Sequence[int],
                  cutoff: int = 0) -> list[dict]:
    """TL runs over the same inputs encoded in each base, grouped by ``omega(B)``."""
    rows = []
    for w, group in group_by_omega(bases).items():
        vals = [run_tl(cfg, cutoff, s, base=b).report.verifiability for b in group for s in seeds]
        m, se = mean_stderr(vals)
        rows.append({"omega": w, "bases": " ".join(map(str, group)), "runs": len(vals),
                     "verifiability_mean": f"{m:.6f}", "verifiability_stderr": f"{se:.6f}"})
    return rows


def depth_rows(hist: dict[int, int]) -> list[dict]:
    total = sum(hist.values())
    rows, cum = [], 0
    for d, c in sorted(hist.items()):
        cum += c
        rows.append({"depth": d, "count": c, "fraction": f"{c / total:.6f}",
                     "cumulative": f"{cum / total:.6f}"})
    return rows
