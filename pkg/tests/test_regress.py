import numpy as np
import pytest

from rcmonitor.features import Target
from rcmonitor.regress import (
    LinearModel,
    SchemaError,
    fit_matrix,
    fit_ols,
    lstsq_qr,
    predict,
    predict_matrix,
)


def normal_equations(X, y):
    """Independent oracle: solve (A^T A) b = A^T y directly."""
    A = np.column_stack([np.ones(len(X)), X])
    return np.linalg.solve(A.T @ A, A.T @ y)


def test_exact_line():
    rows = [({"x": float(x)}, 2.0 * x + 1.0) for x in range(10)]
    m = fit_ols(rows)
    assert m.coefficient("x") == pytest.approx(2.0, abs=1e-12)
    assert m.intercept == pytest.approx(1.0, abs=1e-12)
    assert m.train_row_count == 10
    assert not m.condition_warning


def test_constant_target():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(50, 3))
    m = fit_matrix(X, np.full(50, 4.2), ["a", "b", "c"], Target.TEMPERATURE)
    assert np.allclose(m.coefficients, 0, atol=1e-12)
    assert m.intercept == pytest.approx(4.2, abs=1e-12)


def test_matches_normal_equations():
    rng = np.random.default_rng(1)
    for _ in range(20):
        n, p = rng.integers(20, 200), rng.integers(1, 12)
        X = rng.normal(size=(n, p)) * rng.uniform(0.5, 5, p)
        y = X @ rng.normal(size=p) + rng.normal(size=n)
        m = fit_matrix(X, y, [f"f{i}" for i in range(p)], Target.HUMIDITY)
        ref = normal_equations(X, y)
        assert m.intercept == pytest.approx(ref[0], abs=1e-8)
        assert np.allclose(m.coefficients, ref[1:], atol=1e-8)


def test_residual_mean_zero():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(300, 4))
    y = X @ [1, -2, 0.5, 3] + 7 + rng.normal(size=300)
    m = fit_matrix(X, y, list("abcd"), Target.TEMPERATURE)
    assert abs(np.mean(y - predict_matrix(m, X))) < 1e-9


def test_duplicate_column_ridge():
    rng = np.random.default_rng(3)
    x = rng.normal(size=100)
    X = np.column_stack([x, x])
    y = 3 * x + 1
    m = fit_matrix(X, y, ["x", "x_copy"], Target.TEMPERATURE)
    assert m.condition_warning
    assert np.all(np.isfinite(m.coefficients))
    assert m.coefficients.sum() == pytest.approx(3.0, abs=1e-6)
    assert np.allclose(predict_matrix(m, X), y, atol=1e-6)


def test_zero_column_ridge():
    rng = np.random.default_rng(4)
    x = rng.normal(size=100)
    X = np.column_stack([x, np.zeros(100)])
    m = fit_matrix(X, 2 * x, ["x", "z"], Target.TEMPERATURE)
    assert m.condition_warning
    assert m.coefficient("z") == 0.0
    assert m.coefficient("x") == pytest.approx(2.0, abs=1e-6)


def test_lstsq_full_rank_flag():
    A = np.array([[1.0, 0], [0, 1], [1, 1]])
    b, deficient = lstsq_qr(A, np.array([1.0, 2, 3]))
    assert not deficient
    assert np.allclose(b, [1, 2])


def test_deterministic():
    rng = np.random.default_rng(5)
    X = rng.normal(size=(80, 5))
    y = rng.normal(size=80)
    a = fit_matrix(X, y, list("abcde"), Target.TEMPERATURE)
    b = fit_matrix(X.copy(), y.copy(), list("abcde"), Target.TEMPERATURE)
    assert a.coefficients.tobytes() == b.coefficients.tobytes()
    assert a.intercept == b.intercept


def test_batch_predict_bitwise():
    rng = np.random.default_rng(6)
    X = rng.normal(size=(64, 7)) * 100
    m = fit_matrix(X, rng.normal(size=64), [f"f{i}" for i in range(7)], Target.TEMPERATURE)
    batch = predict_matrix(m, X)
    for i, row in enumerate(X):
        single = predict(m, dict(zip(m.feature_names, row)))
        assert single == batch[i]


def test_save_load_roundtrip(tmp_path):
    rng = np.random.default_rng(7)
    X = rng.normal(size=(30, 3))
    m = fit_matrix(X, rng.normal(size=30), ["a", "b", "c"], Target.HUMIDITY, meta={"stage": "land"})
    m.save(tmp_path / "m.json")
    m2 = LinearModel.load(tmp_path / "m.json")
    assert m2.feature_names == m.feature_names
    assert m2.coefficients.tobytes() == m.coefficients.tobytes()
    assert m2.intercept == m.intercept and m2.target is Target.HUMIDITY
    assert m2.meta == {"stage": "land"}
    assert predict_matrix(m2, X).tobytes() == predict_matrix(m, X).tobytes()


def test_missing_feature():
    m = fit_ols([({"a": float(i), "b": float(i % 3)}, float(i)) for i in range(10)])
    with pytest.raises(SchemaError, match="'b'"):
        predict(m, {"a": 1.0})


def test_schema_mismatch_between_rows():
    with pytest.raises(SchemaError):
        fit_ols([({"a": 1.0}, 1.0), ({"b": 2.0}, 2.0)])


def test_input_validation():
    with pytest.raises(ValueError):
        fit_matrix(np.ones((1, 1)), np.ones(1), ["a"], Target.TEMPERATURE)
    with pytest.raises(ValueError):
        fit_matrix(np.array([[1.0], [np.nan]]), np.ones(2), ["a"], Target.TEMPERATURE)
