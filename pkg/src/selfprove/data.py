"""Log-uniform input sampling, honest-transcript datasets and their file format."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .encoding import Vocabulary, decode_blocks, encode_fields, loss_mask, pad_to
from .proof_system import (BezoutProof, GcdInstance, bezout_verify, euclidean_depth,
                           extended_euclid, pad_steps)

log = logging.getLogger(__name__)

# Independent RNG streams derived from one user seed.
TRAIN_STREAM = 0
HELDOUT_STREAM = 1
RLVF_STREAM = 2


def stream_rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(stream)])


class LogUniformSampler:
    """Discrete distribution on ``{1..M}`` with ``P(k) = (1/k) / H_M``, by inverse CDF."""

    def __init__(self, max_value: int):
        if max_value < 1:
            raise ValueError("max must be >= 1")
        self.max_value = max_value
        self.cumulative = np.cumsum(1.0 / np.arange(1, max_value + 1))

    @property
    def harmonic(self) -> float:
        return float(self.cumulative[-1])

    def pmf(self) -> np.ndarray:
        return 1.0 / np.arange(1, self.max_value + 1) / self.harmonic

    def draw(self, rng: np.random.Generator, size=None) -> np.ndarray:
        u = rng.random(size) * self.harmonic
        k = np.searchsorted(self.cumulative, u, side="right") + 1
        return np.minimum(k, self.max_value)

    def draw_pairs(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return self.draw(rng, (n, 2))


def sample_input(sampler: LogUniformSampler, rng: np.random.Generator) -> GcdInstance:
    x0, x1 = sampler.draw(rng, 2)
    return GcdInstance(int(x0), int(x1))


@dataclass
class Record:
    inst: GcdInstance
    y: int
    proof: BezoutProof
    steps: tuple
    tokens: list[int]


def make_record(inst: GcdInstance, vocab: Vocabulary) -> Record:
    """Honest prover, annotation and encoding for one input."""
    y, proof, steps = extended_euclid(inst)
    steps = pad_steps(steps, vocab.cutoff)
    toks = encode_fields(inst.x0, inst.x1, y, steps, proof.z0, proof.z1, vocab)
    return Record(inst, y, proof, steps, toks)


def max_sequence_length(max_value: int, vocab: Vocabulary) -> int:
    """Longest encoded sequence over all inputs in ``[1, max_value]^2``.

    Exact for small ``max_value``; otherwise bounded from digit counts of the
    largest magnitudes that can appear (every trace value is at most ``max_value``).
    """
    if max_value <= 300:
        return max(len(make_record(GcdInstance(a, b), vocab).tokens)
                   for a in range(1, max_value + 1) for b in range(1, max_value + 1))
    n_digits = len(np.base_repr(max_value, vocab.base)) if vocab.base <= 36 else \
        int(np.floor(np.log(max_value) / np.log(vocab.base))) + 1
    return (2 + n_digits) * (5 + 3 * vocab.cutoff)


@dataclass
class Dataset:
    base: int
    cutoff: int
    max_value: int
    seed: int
    tokens: np.ndarray  # (n, length) int64
    records: list[Record] = field(default_factory=list, repr=False)

    @property
    def vocab(self) -> Vocabulary:
        return Vocabulary(self.base, self.cutoff)

    @property
    def length(self) -> int:
        return self.tokens.shape[1]

    def __len__(self) -> int:
        return len(self.tokens)

    def masks(self) -> np.ndarray:
        vocab = self.vocab
        return np.stack([loss_mask(row, vocab) for row in self.tokens]) if len(self) else \
            np.zeros((0, self.length), dtype=bool)

    def pairs(self) -> set[tuple[int, int]]:
        if self.records:
            return {(r.inst.x0, r.inst.x1) for r in self.records}
        vocab = self.vocab
        out = set()
        for row in self.tokens:
            f = decode_blocks(row, vocab).fields(vocab)
            out.add((f["x0"], f["x1"]))
        return out

    def header(self) -> str:
        return (f"base={self.base} cutoff={self.cutoff} max={self.max_value} "
                f"seed={self.seed} len={self.length}")

    def save(self, path: str | Path) -> None:
        path = Path(path)
        try:
            with open(path, "w") as f:
                f.write(self.header() + "\n")
                for row in self.tokens:
                    f.write(" ".join(map(str, row.tolist())) + "\n")
        except OSError as e:
            raise OSError(f"cannot write dataset {path}: {e}") from e

    @classmethod
    def load(cls, path: str | Path) -> "Dataset":
        path = Path(path)
        try:
            with open(path) as f:
                header = f.readline().split()
                rows = [list(map(int, line.split())) for line in f if line.strip()]
        except OSError as e:
            raise OSError(f"cannot read dataset {path}: {e}") from e
        meta = dict(item.split("=", 1) for item in header)
        length = int(meta["len"])
        tokens = np.asarray(rows, dtype=np.int64).reshape(len(rows), length)
        return cls(int(meta["base"]), int(meta["cutoff"]), int(meta["max"]), int(meta["seed"]), tokens)


def generate_dataset(max_value: int, base: int, cutoff: int, n: int, seed: int,
                     length: int | None = None) -> Dataset:
    """``n`` honest annotated transcripts for log-uniform inputs, deterministic in ``seed``."""
    vocab = Vocabulary(base, cutoff)
    sampler = LogUniformSampler(max_value)
    pairs = sampler.draw_pairs(stream_rng(seed, TRAIN_STREAM), n)
    if length is None:
        length = max_sequence_length(max_value, vocab)
    cache: dict[tuple[int, int], Record] = {}
    records = []
    tokens = np.full((n, length), vocab.pad, dtype=np.int64)
    for i, (a, b) in enumerate(pairs.tolist()):
        rec = cache.get((a, b))
        if rec is None:
            rec = cache[(a, b)] = make_record(GcdInstance(a, b), vocab)
            assert bezout_verify(rec.inst, rec.y, rec.proof)
        records.append(rec)
        tokens[i, :len(rec.tokens)] = rec.tokens
    return Dataset(base, cutoff, max_value, seed, tokens, records)


def heldout_inputs(max_value: int, n: int, seed: int,
                   exclude: Iterable[tuple[int, int]] = ()) -> list[GcdInstance]:
    """``n`` log-uniform inputs from a separate stream, skipping excluded pairs."""
    exclude = set(exclude)
    sampler = LogUniformSampler(max_value)
    rng = stream_rng(seed, HELDOUT_STREAM)
    out: list[GcdInstance] = []
    while len(out) < n:
        for a, b in sampler.draw_pairs(rng, 4 * n).tolist():
            if (a, b) not in exclude:
                out.append(GcdInstance(a, b))
                if len(out) == n:
                    break
    return out


def estimate_depth_ceiling(max_value: int, cutoff: int, n_samples: int, seed: int) -> float:
    """Monte-Carlo estimate of ``P[euclidean_depth <= cutoff]`` under log-uniform inputs."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    pairs = LogUniformSampler(max_value).draw_pairs(np.random.default_rng(seed), n_samples)
    hits = sum(euclidean_depth(GcdInstance(a, b)) <= cutoff for a, b in pairs.tolist())
    return hits / n_samples


def depth_histogram(max_value: int, n_samples: int, seed: int) -> dict[int, int]:
    pairs = LogUniformSampler(max_value).draw_pairs(np.random.default_rng(seed), n_samples)
    hist: dict[int, int] = {}
    for a, b in pairs.tolist():
        d = euclidean_depth(GcdInstance(a, b))
        hist[d] = hist.get(d, 0) + 1
    return dict(sorted(hist.items()))


def write_vocab(vocab: Vocabulary, path: str | Path) -> None:
    Path(path).write_text(vocab.table())


def pad_rows(rows: list[list[int]], length: int, vocab: Vocabulary) -> np.ndarray:
    return np.asarray([pad_to(r, length, vocab) for r in rows], dtype=np.int64)
