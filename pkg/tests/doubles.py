"""Stand-in models for evaluation tests: an honest replayer, a random typist, a zero prover."""
from __future__ import annotations

import numpy as np

from selfprove.encoding import Vocabulary, decode_blocks, encode_fields
from selfprove.model.base import AutoregressiveModel, Decoder
from selfprove.proof_system import GcdInstance, extended_euclid, pad_steps

CONFIDENT = 50.0


def honest_sequence(x0: int, x1: int, vocab: Vocabulary, zero_proof: bool = False) -> list[int]:
    y, proof, steps = extended_euclid(GcdInstance(x0, x1))
    z0, z1 = (0, 0) if zero_proof else (proof.z0, proof.z1)
    return encode_fields(x0, x1, y, pad_steps(steps, vocab.cutoff), z0, z1, vocab)


class _Scripted(AutoregressiveModel):
    """Puts all mass on a scripted next token once the input has been read."""

    backend = "scripted"

    def __init__(self, vocab: Vocabulary, zero_proof: bool = False):
        self.vocab = vocab
        self.vocab_size = len(vocab)
        self.window = 1 << 20
        self.zero_proof = zero_proof

    n_params = 0

    def init_params(self, seed=0):
        return np.zeros(0)

    def describe(self):
        return {"backend": self.backend}

    def logits_all(self, theta, tokens):
        raise NotImplementedError

    def forward_backward(self, theta, tokens, weights, coef=None):
        raise NotImplementedError

    def decoder(self, theta, batch):
        return _ScriptDecoder(self, batch)

    def script(self, prefix: list[int]) -> list[int] | None:
        d = decode_blocks(prefix, self.vocab)
        if len(d.blocks) < 2 or [n for n, _ in d.blocks[:2]] != ["x0", "x1"]:
            return None
        return honest_sequence(d.blocks[0][1], d.blocks[1][1], self.vocab, self.zero_proof)


class _ScriptDecoder(Decoder):
    def __init__(self, model: _Scripted, batch: int):
        self.model = model
        self.prefix = [[] for _ in range(batch)]

    def feed(self, tokens):
        V = self.model.vocab_size
        out = np.zeros((len(tokens), V))
        for b, t in enumerate(tokens):
            self.prefix[b].append(int(t))
            seq = self.model.script(self.prefix[b])
            pos = len(self.prefix[b])
            if seq is not None and pos < len(seq):
                out[b, seq[pos]] = CONFIDENT
        return out


def replay_model(vocab: Vocabulary) -> _Scripted:
    return _Scripted(vocab)


def zero_proof_model(vocab: Vocabulary) -> _Scripted:
    return _Scripted(vocab, zero_proof=True)


class RandomTokenModel(_Scripted):
    """Logits drawn afresh at every step; greedy decoding then types random tokens."""

    def __init__(self, vocab: Vocabulary, seed: int = 0):
        super().__init__(vocab)
        self.rng = np.random.default_rng(seed)

    def decoder(self, theta, batch):
        model = self

        class _D(Decoder):
            def feed(self, tokens):
                return model.rng.normal(0.0, 1.0, (len(tokens), model.vocab_size))
        return _D()
