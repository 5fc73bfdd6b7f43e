"""Interactive-proof verifiers, and the Bézout proof system for GCD."""
from __future__ import annotations

import abc
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

from .encoding import DecodeError, Vocabulary, decode_blocks, encode_block, encode_int, extract_blocks
from .model.base import StopRule

INT64_MAX = 2**63 - 1


class ProtocolOverrun(RuntimeError):
    """A query was requested after the verifier's last round."""


class NotAccepting(ValueError):
    """Annotation was requested for a transcript the verifier rejects."""


@dataclass(frozen=True)
class GcdInstance:
    x0: int
    x1: int

    def __post_init__(self):
        if self.x0 < 1 or self.x1 < 1:
            raise ValueError(f"GCD inputs must be positive, got ({self.x0}, {self.x1})")

    def check_max(self, max_value: int) -> "GcdInstance":
        if self.x0 > max_value or self.x1 > max_value:
            raise ValueError(f"({self.x0}, {self.x1}) exceeds maximum {max_value}")
        return self


@dataclass(frozen=True)
class BezoutProof:
    z0: int
    z1: int


@dataclass(frozen=True)
class Transcript:
    """Input tokens, output ``y`` tokens and the ``(query, answer)`` rounds."""

    input: tuple[int, ...]
    y: tuple[int, ...]
    rounds: tuple[tuple[tuple[int, ...], tuple[int, ...]], ...] = ()

    @property
    def answers(self) -> list[tuple[int, ...]]:
        return [a for _, a in self.rounds]


@dataclass(frozen=True)
class AnnotatedTranscript:
    transcript: Transcript
    proof: BezoutProof
    steps: tuple[tuple[int, int, int], ...]
    cutoff: int

    def __post_init__(self):
        if len(self.steps) != self.cutoff:
            raise ValueError("annotation length must equal the cutoff")


def _checked(v: int) -> int:
    if abs(v) > INT64_MAX:
        raise OverflowError(f"intermediate {v} exceeds 64-bit range")
    return v


def extended_euclid(inst: GcdInstance) -> tuple[int, BezoutProof, list[tuple[int, int, int]]]:
    """Extended Euclid, recording ``(s0, r0, q)`` at every loop iteration."""
    x0, x1 = inst.x0, inst.x1
    r0, r1, s0, s1 = x0, x1, 1, 0
    steps = []
    while r1 != 0:
        q = r0 // r1
        steps.append((s0, r0, q))
        r0, r1 = r1, _checked(r0 - q * r1)
        s0, s1 = s1, _checked(s0 - q * s1)
    num = r0 - s0 * x0
    z1, rem = divmod(num, x1)
    assert rem == 0, "Bezout identity violated"
    return r0, BezoutProof(s0, z1), steps


def euclidean_depth(inst: GcdInstance) -> int:
    """Number of loop iterations of extended Euclid on ``inst``."""
    r0, r1, depth = inst.x0, inst.x1, 0
    while r1:
        r0, r1 = r1, r0 % r1
        depth += 1
    return depth


def bezout_verify(inst: GcdInstance, y: int, proof: BezoutProof) -> bool:
    """Accept iff ``y >= 1`` divides both inputs and ``y = z0*x0 + z1*x1``."""
    x0, x1 = inst.x0, inst.x1
    return (y >= 1 and x0 % y == 0 and x1 % y == 0
            and proof.z0 * x0 + proof.z1 * x1 == y)


class Verifier(abc.ABC):
    """An R-round verifier: a query generator plus a final decision."""

    rounds: int = 1
    query_length: int = 1
    answer_length: int | None = None
    soundness_error: Fraction = Fraction(0)

    @abc.abstractmethod
    def query(self, x: Sequence[int], y: Sequence[int], partial: Sequence, rng) -> tuple[int, ...]:
        """Next query given the completed rounds ``partial``."""

    @abc.abstractmethod
    def decide(self, t: Transcript, rng) -> bool:
        ...

    @abc.abstractmethod
    def output_stop(self) -> StopRule:
        """How a prover's output ``y`` is delimited when sampled."""

    @abc.abstractmethod
    def answer_stop(self) -> StopRule:
        """How one answer is delimited when sampled."""

    def layout(self, t: Transcript) -> list[int]:
        """Model-facing token sequence for a transcript: ``x y q1 a1 ... qR aR``."""
        toks = list(t.input) + list(t.y)
        for q, a in t.rounds:
            toks += list(q) + list(a)
        return toks


def verifier_query(spec: Verifier, x, y, partial, rng=None) -> tuple[int, ...]:
    if len(partial) >= spec.rounds:
        raise ProtocolOverrun(f"{len(partial)} rounds already complete, verifier has {spec.rounds}")
    return spec.query(x, y, partial, rng)


def verifier_decide(spec: Verifier, t: Transcript, rng=None) -> bool:
    if len(t.rounds) != spec.rounds:
        return False
    return bool(spec.decide(t, rng))


class BezoutVerifier(Verifier):
    """One round, no information in the query: the prover sends ``(z0, z1)``.

    The dummy query is the single pad token. It carries nothing, so ``layout``
    leaves it out of the model context, matching the plain ``x y proof`` encoding.
    """

    rounds = 1
    query_length = 1
    soundness_error = Fraction(0)

    def __init__(self, vocab: Vocabulary, max_value: int = INT64_MAX):
        self.vocab = vocab
        # sign plus digits of the largest magnitude a sampled block may carry
        self.block_budget = len(encode_int(max_value, vocab))
        self.delimiters = frozenset(range(vocab.base + 2, vocab.pad))

    def output_stop(self) -> StopRule:
        return StopRule(blocks=1, block_budget=self.block_budget, delimiters=self.delimiters)

    def answer_stop(self) -> StopRule:
        return StopRule(blocks=3 * self.vocab.cutoff + 2, block_budget=self.block_budget,
                        delimiters=self.delimiters)

    @property
    def dummy_query(self) -> tuple[int, ...]:
        return (self.vocab.pad,)

    def query(self, x, y, partial, rng=None):
        return self.dummy_query

    def layout(self, t: Transcript) -> list[int]:
        toks = list(t.input) + list(t.y)
        for _, a in t.rounds:
            toks += list(a)
        return toks

    def decode_input(self, tokens: Sequence[int]) -> GcdInstance | None:
        d = decode_blocks(tokens, self.vocab)
        if not d.ok or [n for n, _ in d.blocks] != ["x0", "x1"]:
            return None
        try:
            return GcdInstance(d.blocks[0][1], d.blocks[1][1])
        except ValueError:
            return None

    def decode_output(self, tokens: Sequence[int]) -> int | None:
        d = decode_blocks(tokens, self.vocab)
        if not d.ok or len(d.blocks) != 1 or d.blocks[0][0] != "y":
            return None
        return d.blocks[0][1]

    def decode_proof(self, answer: Sequence[int]) -> BezoutProof | None:
        try:
            _, d = extract_blocks(answer, self.vocab)
        except DecodeError:
            return None
        return BezoutProof(d.blocks[-2][1], d.blocks[-1][1])

    def decide(self, t: Transcript, rng=None) -> bool:
        inst = self.decode_input(t.input)
        y = self.decode_output(t.y)
        if inst is None or y is None:
            return False
        if tuple(t.rounds[0][0]) != self.dummy_query:
            return False
        proof = self.decode_proof(t.rounds[0][1])
        return proof is not None and bezout_verify(inst, y, proof)


def encode_input(inst: GcdInstance, vocab: Vocabulary) -> tuple[int, ...]:
    return tuple(encode_block(inst.x0, "x0", vocab) + encode_block(inst.x1, "x1", vocab))


def honest_transcript(inst: GcdInstance, verifier: BezoutVerifier) -> Transcript:
    """The honest prover's transcript (unannotated proof)."""
    vocab = verifier.vocab
    y, proof, _ = extended_euclid(inst)
    answer = tuple(encode_block(proof.z0, "z0", vocab) + encode_block(proof.z1, "z1", vocab))
    return Transcript(encode_input(inst, vocab), tuple(encode_block(y, "y", vocab)),
                      ((verifier.dummy_query, answer),))


def pad_steps(steps: Sequence[tuple[int, int, int]], cutoff: int) -> tuple[tuple[int, int, int], ...]:
    """First ``cutoff`` trace rows; short traces repeat their last row."""
    steps = list(steps[:cutoff])
    while steps and len(steps) < cutoff:
        steps.append(steps[-1])
    return tuple(steps)


def annotate(inst: GcdInstance, t: Transcript, cutoff: int, verifier: BezoutVerifier) -> AnnotatedTranscript:
    """Attach the first ``cutoff`` Euclid trace rows to an accepting transcript."""
    if cutoff < 0:
        raise ValueError("cutoff must be non-negative")
    if not verifier_decide(verifier, t):
        raise NotAccepting(f"transcript for ({inst.x0}, {inst.x1}) is not accepted")
    proof = verifier.decode_proof(t.rounds[0][1])
    _, _, steps = extended_euclid(inst)
    return AnnotatedTranscript(t, proof, pad_steps(steps, cutoff), cutoff)


def annotated_answer(a: AnnotatedTranscript, vocab: Vocabulary) -> list[int]:
    """Answer tokens with annotation blocks in front of the proof."""
    toks = []
    for k, (s0, r0, q) in enumerate(a.steps, start=1):
        d_s, d_r, d_q = vocab.step_delimiters(k)
        toks += encode_block(s0, d_s, vocab) + encode_block(r0, d_r, vocab) + encode_block(q, d_q, vocab)
    return toks + encode_block(a.proof.z0, "z0", vocab) + encode_block(a.proof.z1, "z1", vocab)


def fibonacci_pair(n: int) -> GcdInstance:
    """``(F_{n+1}, F_n)`` with ``F_1 = F_2 = 1``."""
    a, b = 1, 1
    for _ in range(n - 1):
        a, b = a + b, a
    return GcdInstance(a, b)
