import numpy as np
import pytest

import fwsvd


def test_svd_matches_numpy():
    rng = np.random.default_rng(0)
    w = rng.standard_normal((9, 6))
    u, s, v = fwsvd.svd(w)
    np.testing.assert_allclose(s, np.linalg.svd(w, compute_uv=False), rtol=1e-12)
    np.testing.assert_allclose(u @ np.diag(s) @ v.T, w, atol=1e-12)
    np.testing.assert_allclose(fwsvd.reconstruct(u, s, v), w, atol=1e-12)


def test_truncate_keeps_leading_values():
    u, s, v = fwsvd.svd(np.diag([3.0, 1.0]))
    tu, ts, tv = fwsvd.truncate(u, s, v, 1)
    np.testing.assert_allclose(fwsvd.reconstruct(tu, ts, tv), np.diag([3.0, 0.0]), atol=1e-15)


def test_frobenius_helpers():
    assert fwsvd.frobenius_error(np.array([[3.0, 4.0]]), np.zeros((1, 2))) == pytest.approx(5.0)
    assert fwsvd.weighted_frobenius_error(np.eye(2), np.zeros((2, 2)), np.diag([4.0, 9.0])) == pytest.approx(13.0)


def test_rank_and_groups():
    assert fwsvd.rank_for_ratio(64, 64, 0.33) == 21
    assert fwsvd.rank_for_ratio(10, 7, 0.05) == 1
    assert [b - a for a, b in fwsvd.group_partition(11, 5)] == [3, 2, 2, 2, 2]


def test_fwsvd_prefers_important_row():
    w = np.array([[1.0, 0.0], [0.0, 0.9]])
    a, b = fwsvd.factorize_fwsvd(w, np.array([1.0, 100.0]), 1)
    np.testing.assert_allclose(a @ b, [[0.0, 0.0], [0.0, 0.9]], atol=1e-12)
    a, b = fwsvd.factorize_svd(w, 1)
    np.testing.assert_allclose(a @ b, [[1.0, 0.0], [0.0, 0.0]], atol=1e-12)


def test_row_importance_and_errors():
    values, diag = fwsvd.row_importance(np.array([[1.0, 2.0], [3.0, 4.0]]))
    np.testing.assert_allclose(values, [3.0, 7.0])
    np.testing.assert_allclose(diag, np.sqrt([3.0, 7.0]))
    with pytest.raises(fwsvd.ValidationError):
        fwsvd.row_importance(np.array([[1.0, -1.0]]))


def test_demo_pipeline(tmp_path):
    task = fwsvd.make_demo_task(3)
    student = fwsvd.train_demo(task.student, task.train, seed=3, epochs=2)
    before = fwsvd.evaluate(task.student, task.eval)
    assert fwsvd.evaluate(student, task.eval) < before

    fisher = fwsvd.accumulate_fisher(student, task.train, workers=2)
    assert sorted(fisher) == sorted(student.dense_layers)
    compressed, report = fwsvd.compress(student, "fwsvd", 0.3, fisher)
    assert compressed.parameter_count < student.parameter_count
    assert report[0]["layer"] == "fc1" and report[0]["rank"] == 19
    assert report[0]["params_before"] - report[0]["params_after"] == 1664

    rows = fwsvd.group_truncation(student, fisher, task.eval, 10)
    assert len(rows) == 20 and {r["method"] for r in rows} == {"svd", "fwsvd"}

    path = tmp_path / "model.fwsv"
    fwsvd.save_model(compressed, path)
    again = fwsvd.load_model(path)
    assert fwsvd.evaluate(again, task.eval) == fwsvd.evaluate(compressed, task.eval)


def test_compress_requires_fisher_for_fwsvd():
    task = fwsvd.make_demo_task(1)
    with pytest.raises(fwsvd.ValidationError):
        fwsvd.compress(task.student, "fwsvd", 0.3)
