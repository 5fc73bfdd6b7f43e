import numpy as np
import pytest

from doubles import RandomTokenModel, replay_model, zero_proof_model
from selfprove.data import heldout_inputs
from selfprove.encoding import Vocabulary
from selfprove.evaluation import (ExperimentConfig, depth_rows, evaluate, group_by_omega, mean_stderr,
                                  prepare, write_csv)
from selfprove.proof_system import BezoutVerifier, GcdInstance


@pytest.fixture(scope="module")
def setting():
    vocab = Vocabulary(10)
    return vocab, BezoutVerifier(vocab, 100), heldout_inputs(100, 300, 0)


def test_honest_replayer_is_perfect(setting):
    vocab, v, inputs = setting
    r = evaluate(np.zeros(0), replay_model(vocab), v, inputs)
    assert (r.correctness, r.verifiability) == (1.0, 1.0) and r.decode_failures == 0
    assert sum(n for n, _ in r.by_depth.values()) == len(inputs)


def test_annotated_replayer_is_perfect():
    vocab = Vocabulary(10, 3)
    r = evaluate(np.zeros(0), replay_model(vocab), BezoutVerifier(vocab, 100), heldout_inputs(100, 200, 1))
    assert (r.correctness, r.verifiability) == (1.0, 1.0)


def test_zero_proof_is_correct_but_never_verified(setting):
    vocab, v, inputs = setting
    # (0, 0) is a valid proof only if gcd were 0, which never happens
    r = evaluate(np.zeros(0), zero_proof_model(vocab), v, inputs)
    assert r.correctness == 1.0 and r.verifiability == 0.0


def test_random_typist_is_almost_never_verified():
    vocab = Vocabulary(10)
    inputs = heldout_inputs(10_000, 10_000, 2)
    r = evaluate(np.zeros(0), RandomTokenModel(vocab, 3), BezoutVerifier(vocab, 10_000), inputs)
    assert r.verified <= 5 and r.verifiability <= r.correctness


def test_evaluation_is_pure(setting):
    vocab, v, inputs = setting
    th = np.zeros(0)
    a = evaluate(th, zero_proof_model(vocab), v, inputs, chunk=64)
    b = evaluate(th, zero_proof_model(vocab), v, inputs)
    assert a == b


def test_report_row_exact_counts():
    from selfprove.evaluation import EvalReport
    r = EvalReport(1000, 953, 512, 3)
    row = r.row()
    assert row["correct"] == 953 and row["verified"] == 512 and row["correctness"] == "0.953000"


def test_omega_grouping():
    g = group_by_omega([2, 3, 4, 6, 10, 30, 210, 1386])
    assert g == {1: [2, 3, 4], 2: [6, 10], 3: [30], 4: [210, 1386]}


def test_mean_stderr():
    m, s = mean_stderr([0.1, 0.2, 0.3])
    assert m == pytest.approx(0.2) and s == pytest.approx(0.1 / np.sqrt(3))


def test_depth_rows_cumulative():
    rows = depth_rows({1: 2, 2: 6, 3: 2})
    assert [r["cumulative"] for r in rows] == ["0.200000", "0.800000", "1.000000"]


def test_prepare_keeps_heldout_disjoint():
    ex = prepare(ExperimentConfig(n=500, heldout=200, width=16, layers=1, heads=2), 0, 0)
    assert not {(h.x0, h.x1) for h in ex.heldout} & ex.dataset.pairs()
    assert ex.model.window >= ex.dataset.length


def test_write_csv_reports_path(tmp_path):
    with pytest.raises(OSError, match="nodir"):
        write_csv(tmp_path / "nodir" / "x.csv", ["a"], [{"a": 1}])


def test_out_of_range_input_rejected():
    with pytest.raises(ValueError):
        GcdInstance(0, 5)


TINY = ExperimentConfig(n=200, iters=3, batch=4, width=8, layers=1, heads=2, mlp_ratio=2, heldout=20,
                        eval_size=5, warmup=0)


def test_annotation_ablation_table():
    from selfprove.evaluation import ANNOTATION_COLUMNS, ablation_annotation
    rows = ablation_annotation([0, 2], TINY, seeds=[0, 1], depth_samples=2000)
    assert [r["cutoff"] for r in rows] == [0, 2] and all(set(r) == set(ANNOTATION_COLUMNS) for r in rows)
    assert float(rows[0]["depth_ceiling"]) == 0.0 and 0 < float(rows[1]["depth_ceiling"]) < 1
    assert all(r["seeds"] == 2 for r in rows)


def test_base_ablation_groups_by_omega():
    from selfprove.evaluation import ablation_base
    rows = ablation_base([2, 6, 10], TINY, seeds=[0])
    assert [(r["omega"], r["bases"], r["runs"]) for r in rows] == [(1, "2", 1), (2, "6 10", 2)]
