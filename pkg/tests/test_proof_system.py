import math

import pytest
from hypothesis import given, settings, strategies as st

from selfprove.encoding import Vocabulary
from selfprove.proof_system import (BezoutProof, BezoutVerifier, GcdInstance, NotAccepting,
                                    ProtocolOverrun, Transcript, annotate, annotated_answer,
                                    bezout_verify, euclidean_depth, extended_euclid, fibonacci_pair,
                                    honest_transcript, pad_steps, verifier_decide, verifier_query)

positive = st.integers(min_value=1, max_value=10**12)


def test_trace_for_46_39():
    y, proof, steps = extended_euclid(GcdInstance(46, 39))
    assert y == 1
    assert proof == BezoutProof(-11, 13)
    assert steps == [(1, 46, 1), (0, 39, 5), (1, 7, 1), (-5, 4, 1), (6, 3, 3)]


@given(positive, positive)
@settings(max_examples=300)
def test_extended_euclid_is_bezout(a, b):
    y, p, _ = extended_euclid(GcdInstance(a, b))
    assert y == math.gcd(a, b)
    assert p.z0 * a + p.z1 * b == y
    assert bezout_verify(GcdInstance(a, b), y, p)


@pytest.mark.parametrize("a,b,z", [(1, 1, (0, 1)), (5, 5, (0, 1)), (1, 7, (1, 0)), (12, 4, (0, 1))])
def test_small_cases(a, b, z):
    y, p, _ = extended_euclid(GcdInstance(a, b))
    assert (p.z0, p.z1) == z and y == math.gcd(a, b)


def test_instance_rejects_nonpositive():
    with pytest.raises(ValueError):
        GcdInstance(0, 3)
    with pytest.raises(ValueError):
        GcdInstance(3, -1)
    with pytest.raises(ValueError):
        GcdInstance(200, 3).check_max(100)


def test_verifier_rejects_wrong_claims():
    inst = GcdInstance(12, 18)
    assert not bezout_verify(inst, 3, BezoutProof(1, -1))    # 3 is not gcd and 12-18 != 3
    assert not bezout_verify(inst, 12, BezoutProof(1, 0))    # 12 does not divide 18
    assert not bezout_verify(inst, 0, BezoutProof(0, 0))
    assert not bezout_verify(inst, -6, BezoutProof(1, -1))
    assert bezout_verify(inst, 6, BezoutProof(-1, 1))


def test_fibonacci_depth_grows():
    depths = [euclidean_depth(fibonacci_pair(n)) for n in range(3, 20)]
    assert depths == sorted(depths) and depths[-1] > depths[0]
    assert fibonacci_pair(10) == GcdInstance(89, 55)


def test_honest_transcript_accepted_and_protocol_shape():
    v = BezoutVerifier(Vocabulary(10))
    t = honest_transcript(GcdInstance(46, 39), v)
    assert verifier_decide(v, t)
    assert verifier_query(v, t.input, t.y, ()) == v.dummy_query
    with pytest.raises(ProtocolOverrun):
        verifier_query(v, t.input, t.y, t.rounds)
    assert not verifier_decide(v, Transcript(t.input, t.y, ()))
    assert v.layout(t) == list(t.input) + list(t.y) + list(t.rounds[0][1])


def test_annotation_pads_with_last_step():
    assert pad_steps([(1, 2, 3)], 3) == ((1, 2, 3),) * 3
    assert pad_steps([(1, 2, 3), (4, 5, 6)], 1) == ((1, 2, 3),)
    vocab = Vocabulary(10, 3)
    v = BezoutVerifier(vocab)
    a = annotate(GcdInstance(46, 39), honest_transcript(GcdInstance(46, 39), v), 3, v)
    assert a.steps == ((1, 46, 1), (0, 39, 5), (1, 7, 1))
    assert vocab.to_names(annotated_answer(a, vocab))[-8:] == ["-", "1", "1", "z0", "+", "1", "3", "z1"]


def test_annotate_refuses_rejected_transcript():
    v = BezoutVerifier(Vocabulary(10))
    t = honest_transcript(GcdInstance(46, 39), v)
    bad = Transcript(t.input, t.y, ((v.dummy_query, t.rounds[0][1][:-1]),))
    with pytest.raises(NotAccepting):
        annotate(GcdInstance(46, 39), bad, 2, v)


def test_decide_rejects_garbage_answer():
    vocab = Vocabulary(10)
    v = BezoutVerifier(vocab)
    t = honest_transcript(GcdInstance(8, 6), v)
    for answer in [(), (vocab.pad,), (0, 1, 2), tuple(t.rounds[0][1]) + (vocab.plus,)]:
        assert not verifier_decide(v, Transcript(t.input, t.y, ((v.dummy_query, answer),)))
