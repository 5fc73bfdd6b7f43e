"""Exact checks of the two gradient lemmas and the SGA bound on systems small enough to enumerate.

The micro-system: alphabet ``{0, 1, 2}``, input ``x`` drawn from a fixed non-uniform
distribution, ground truth ``F(x) = x + 1 mod 3``. The verifier sends a random bit
``q`` and accepts iff ``y = F(x)`` and the one-token answer avoids ``x + q + 2 mod 3``.
Its honest generator puts 3/4 on the smaller allowed answer and 1/4 on the
other, so agreement is not a fixed multiple of Verifiability. Every
transcript is ``x y q a``, so expectations over it are finite sums.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable

import numpy as np

from .model import AutoregressiveModel, StopRule, TabularModel, TransformerModel
from .proof_system import Transcript, Verifier
from .training import Rollout, prover_layout, rlvf_direction, sga_run, tl_direction

SIGMA = 3
MU = (0.5, 0.3, 0.2)
FD_STEP = 1e-5


def ground_truth(x: int) -> int:
    return (x + 1) % SIGMA


def forbidden(x: int, q: int) -> int:
    return (x + q + 2) % SIGMA


class MicroVerifier(Verifier):
    rounds = 1
    query_length = 1
    answer_length = 1
    soundness_error = Fraction(0)

    def query(self, x, y, partial, rng=None):
        return (int(rng.integers(0, 2)),)

    def decide(self, t: Transcript, rng=None) -> bool:
        (x,), (y,) = t.input, t.y
        (q,), (a,) = t.rounds[0]
        return y == ground_truth(x) and a != forbidden(x, q)

    def output_stop(self) -> StopRule:
        return StopRule(length=1)

    def answer_stop(self) -> StopRule:
        return StopRule(length=1)


HONEST_WEIGHTS = (0.75, 0.25)


def honest_answers(x: int, q: int) -> list[int]:
    return [a for a in range(SIGMA) if a != forbidden(x, q)]


def honest_prob(x: int, y: int, q: int, a: int) -> float:
    """Probability of the prover's messages ``(y, a)`` under the honest generator."""
    allowed = honest_answers(x, q)
    if y != ground_truth(x) or a not in allowed:
        return 0.0
    return HONEST_WEIGHTS[allowed.index(a)]


@dataclass(frozen=True)
class MicroTranscript:
    x: int
    y: int
    q: int
    a: int
    prob_env: float  # mu(x) * P(q)

    @property
    def transcript(self) -> Transcript:
        return Transcript((self.x,), (self.y,), (((self.q,), (self.a,)),))


def all_transcripts() -> list[MicroTranscript]:
    return [MicroTranscript(x, y, q, a, MU[x] * 0.5)
            for x, y, q, a in itertools.product(range(SIGMA), range(SIGMA), range(2), range(SIGMA))]


def _layouts(verifier: Verifier, ts: list[MicroTranscript]):
    toks, masks = zip(*(prover_layout(verifier, t.transcript) for t in ts))
    return np.asarray(toks, dtype=np.int64), np.asarray(masks, dtype=np.float64)


def prover_logprob(model: AutoregressiveModel, theta, ts: list[MicroTranscript]) -> np.ndarray:
    """``log P_theta`` of the prover's tokens (``y`` and ``a``) in each transcript."""
    toks, w = _layouts(MicroVerifier(), ts)
    ll, _ = model.forward_backward(theta, toks, w, lambda v: np.zeros(len(v)))
    return ll


def agreement(model, theta) -> float:
    """``A(theta) = Pr[model transcript == honest transcript]``, same ``x`` and ``q``."""
    ts = [t for t in all_transcripts() if honest_prob(t.x, t.y, t.q, t.a)]
    p = np.exp(prover_logprob(model, theta, ts))
    return float(sum(t.prob_env * honest_prob(t.x, t.y, t.q, t.a) * pi for t, pi in zip(ts, p)))


def verifiability(model, theta) -> float:
    ts = all_transcripts()
    p = np.exp(prover_logprob(model, theta, ts))
    v = MicroVerifier()
    return float(sum(t.prob_env * pi for t, pi in zip(ts, p) if v.decide(t.transcript)))


def expected_tl_update(model, theta) -> np.ndarray:
    """``E[prod alpha * sum d]`` over the honest generator, one TL-faithful direction per transcript."""
    v = MicroVerifier()
    total = np.zeros(model.n_params)
    for t in all_transcripts():
        h = honest_prob(t.x, t.y, t.q, t.a)
        if not h:
            continue
        toks, w = _layouts(v, [t])
        d, _, _ = tl_direction(model, theta, toks, w, faithful=True)
        total += t.prob_env * h * d
    return total


def expected_rlvf_update(model, theta) -> np.ndarray:
    """``E[Acc * sum d]`` over the model's own rollouts, through the RLVF update code."""
    v = MicroVerifier()
    ts = all_transcripts()
    p = np.exp(prover_logprob(model, theta, ts))
    total = np.zeros(model.n_params)
    for t, pi in zip(ts, p):
        toks, mask = prover_layout(v, t.transcript)
        r = Rollout(t.transcript, toks, mask, v.decide(t.transcript), False)
        d, _ = rlvf_direction(model, theta, [r])
        total += t.prob_env * pi * d
    return total


def central_difference(f: Callable[[np.ndarray], float], theta: np.ndarray, h: float = FD_STEP,
                       coords=None) -> np.ndarray:
    coords = range(len(theta)) if coords is None else coords
    g = np.zeros(len(theta))
    for i in coords:
        e = np.zeros(len(theta))
        e[i] = h
        g[i] = (f(theta + e) - f(theta - e)) / (2 * h)
    return g


def rel_error(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


def micro_model(backend: str) -> AutoregressiveModel:
    if backend == "tabular":
        return TabularModel(SIGMA, order=2, window=4)
    if backend == "neural":
        return TransformerModel(SIGMA, window=4, width=8, layers=1, heads=2, mlp_ratio=2)
    raise ValueError(f"unknown backend {backend!r}")


@dataclass
class LemmaPoint:
    index: int
    agreement: float
    verifiability: float
    tl_error: float
    rlvf_error: float


@dataclass
class LemmaReport:
    backend: str
    points: list[LemmaPoint]

    @property
    def max_tl_error(self) -> float:
        return max(p.tl_error for p in self.points)

    @property
    def max_rlvf_error(self) -> float:
        return max(p.rlvf_error for p in self.points)

    @property
    def ordering_holds(self) -> bool:
        return all(p.agreement <= p.verifiability + 1e-15 for p in self.points)

    def passed(self, tol: float) -> bool:
        return self.max_tl_error < tol and self.max_rlvf_error < tol and self.ordering_holds


def check_lemmas(backend: str = "tabular", n_points: int = 20, seed: int = 0,
                 scale: float = 1.0) -> LemmaReport:
    """Expected TL / RLVF updates against finite differences of ``A`` / ``ver`` at random points."""
    model = micro_model(backend)
    rng = np.random.default_rng(seed)
    points = []
    for i in range(n_points):
        if backend == "tabular":
            theta = rng.normal(0.0, scale, model.n_params)
        else:
            theta = model.init_params(int(rng.integers(1 << 31))) * 5 * scale
        fd_a = central_difference(lambda th: agreement(model, th), theta)
        fd_v = central_difference(lambda th: verifiability(model, th), theta)
        points.append(LemmaPoint(
            i, agreement(model, theta), verifiability(model, theta),
            rel_error(expected_tl_update(model, theta), fd_a),
            rel_error(expected_rlvf_update(model, theta), fd_v)))
    return LemmaReport(backend, points)


# ------------------------------------------------------------------ SGA bound

@dataclass
class SgaTrial:
    seed: int
    n: int
    b_norm: float
    b_lip: float
    w_star: float
    mean_value: float
    bound: float

    @property
    def holds(self) -> bool:
        return self.mean_value >= self.bound


def sga_trial(seed: int, repeats: int = 200) -> SgaTrial:
    """SGA on ``f(w) = 1 - (w - w*)^2`` with noisy unbiased gradients.

    The noise is uniform on ``[-sigma, sigma]``. With ``E = max(B_Norm, sigma/2)``
    every iterate stays within ``E`` of ``w*`` (the step is a contraction plus
    bounded noise), so ``|v| <= 2E + sigma`` is a valid ``B_Lip``. The ``repeats``
    independent runs are carried as the coordinates of one vector; their mean
    ``f(w_bar)`` stands in for the expectation.
    """
    rng = np.random.default_rng(seed)
    b_norm = float(rng.uniform(0.25, 2.0))
    w_star = float(rng.uniform(-b_norm, b_norm)) * 0.999
    sigma = float(rng.uniform(0.0, 2.0))
    n = int(rng.integers(5, 400))
    b_lip = 2 * max(b_norm, sigma / 2) + sigma
    lr = b_norm / (b_lip * np.sqrt(n))

    def estimator(w, r):
        return -2.0 * (w - w_star) + r.uniform(-sigma, sigma, size=w.shape)

    w_bar = sga_run(estimator, lr, n, seed=seed, dim=repeats, bound=b_lip,
                    norm=lambda v: float(np.abs(v).max()))
    vals = 1.0 - (w_bar - w_star) ** 2
    return SgaTrial(seed, n, b_norm, b_lip, w_star, float(vals.mean()),
                    1.0 - b_norm * b_lip / np.sqrt(n))
