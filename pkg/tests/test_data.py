import numpy as np
import pytest

from selfprove.data import (Dataset, LogUniformSampler, depth_histogram, estimate_depth_ceiling,
                            generate_dataset, heldout_inputs, max_sequence_length, write_vocab)
from selfprove.encoding import Vocabulary, decode_blocks
from selfprove.proof_system import BezoutProof, GcdInstance, bezout_verify


def test_sampler_pmf_and_range():
    s = LogUniformSampler(10)
    p = s.pmf()
    assert p.sum() == pytest.approx(1.0, abs=1e-12)
    assert p[0] / p[9] == pytest.approx(10.0)
    draws = s.draw(np.random.default_rng(0), 10_000)
    assert draws.min() == 1 and draws.max() == 10
    assert LogUniformSampler(1).draw(np.random.default_rng(0), 5).tolist() == [1] * 5
    with pytest.raises(ValueError):
        LogUniformSampler(0)


def test_dataset_records_verify_and_decode():
    ds = generate_dataset(100, 10, 2, 300, seed=3)
    vocab = ds.vocab
    assert ds.tokens.shape == (300, ds.length)
    for row in ds.tokens[:50]:
        f = decode_blocks(row, vocab).fields(vocab)
        assert bezout_verify(GcdInstance(f["x0"], f["x1"]), f["y"], BezoutProof(f["z0"], f["z1"]))
    assert ds.masks().shape == ds.tokens.shape


def test_dataset_deterministic_and_file_roundtrip(tmp_path):
    a = generate_dataset(1000, 210, 1, 200, seed=5)
    b = generate_dataset(1000, 210, 1, 200, seed=5)
    a.save(tmp_path / "a.txt")
    b.save(tmp_path / "b.txt")
    assert (tmp_path / "a.txt").read_bytes() == (tmp_path / "b.txt").read_bytes()
    c = Dataset.load(tmp_path / "a.txt")
    assert np.array_equal(c.tokens, a.tokens)
    assert c.header() == a.header() == "base=210 cutoff=1 max=1000 seed=5 len=%d" % a.length
    assert c.pairs() == a.pairs()
    assert not np.array_equal(generate_dataset(1000, 210, 1, 200, seed=6).tokens, a.tokens)


def test_io_errors_name_the_path(tmp_path):
    with pytest.raises(OSError, match="nope"):
        Dataset.load(tmp_path / "nope.txt")


def test_max_sequence_length_values():
    assert max_sequence_length(100, Vocabulary(10, 0)) == 21
    assert max_sequence_length(100, Vocabulary(10, 3)) == 56
    ds = generate_dataset(100, 10, 0, 2000, seed=0)
    assert ds.length == 21


def test_heldout_disjoint():
    ds = generate_dataset(100, 10, 0, 3000, seed=1)
    held = heldout_inputs(100, 500, 1, ds.pairs())
    assert len(held) == 500
    assert not {(h.x0, h.x1) for h in held} & ds.pairs()
    assert held == heldout_inputs(100, 500, 1, ds.pairs())


def test_depth_ceiling():
    assert estimate_depth_ceiling(10_000, 0, 1000, 0) == 0.0
    c = [estimate_depth_ceiling(10_000, T, 5000, 0) for T in (1, 3, 8)]
    assert c == sorted(c) and 0 < c[0] < c[-1] <= 1
    h = depth_histogram(100, 2000, 0)
    assert sum(h.values()) == 2000 and min(h) >= 1


def test_vocab_file(tmp_path):
    write_vocab(Vocabulary(10, 1), tmp_path / "v.tsv")
    lines = (tmp_path / "v.tsv").read_text().splitlines()
    assert lines[0] == "0\t0" and lines[10] == "10\t+" and lines[-1].endswith("<pad>")
