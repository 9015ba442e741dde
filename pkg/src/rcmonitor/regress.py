"""Ordinary least squares via column-pivoted Householder QR."""

from __future__ import annotations

import json
import logging
import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import linalg

from .features import INTERCEPT, Target

logger = logging.getLogger(__name__)

RIDGE_DAMPING = 1e-8


class SchemaError(ValueError):
    """Feature names do not line up between rows, or with a model."""


@dataclass(frozen=True, eq=False)
class LinearModel:
    feature_names: tuple[str, ...]
    coefficients: np.ndarray
    intercept: float
    target: Target
    train_row_count: int
    condition_warning: bool = False
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        coef = np.asarray(self.coefficients, dtype=float)
        if coef.shape != (len(self.feature_names),):
            raise ValueError("one coefficient per feature required")
        if not (np.all(np.isfinite(coef)) and math.isfinite(self.intercept)):
            raise ValueError("non-finite coefficients")
        object.__setattr__(self, "coefficients", coef)
        object.__setattr__(self, "feature_names", tuple(self.feature_names))
        object.__setattr__(self, "target", Target(self.target))

    def coefficient(self, name: str) -> float:
        return float(self.coefficients[self.feature_names.index(name)])

    def to_dict(self) -> dict:
        return {
            "target": self.target.value,
            "feature_names": list(self.feature_names),
            "coefficients": self.coefficients.tolist(),
            "intercept": self.intercept,
            "train_row_count": self.train_row_count,
            "condition_warning": self.condition_warning,
            **self.meta,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "LinearModel":
        known = {"target", "feature_names", "coefficients", "intercept", "train_row_count", "condition_warning"}
        return cls(
            feature_names=tuple(d["feature_names"]),
            coefficients=np.asarray(d["coefficients"], dtype=float),
            intercept=float(d["intercept"]),
            target=Target(d["target"]),
            train_row_count=int(d["train_row_count"]),
            condition_warning=bool(d.get("condition_warning", False)),
            meta={k: v for k, v in d.items() if k not in known},
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "LinearModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _numerical_rank(r_diag: np.ndarray, shape: tuple[int, int]) -> int:
    if r_diag.size == 0:
        return 0
    d = np.abs(r_diag)
    tol = max(shape) * np.finfo(float).eps * d[0]
    return int(np.count_nonzero(d > tol))


def lstsq_qr(A: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, bool]:
    """Least-squares solution of ``A b = y``.

    Returns ``(b, deficient)``. When A is numerically rank deficient the
    system is re-solved with a small ridge penalty so the answer stays finite.
    """
    m, n = A.shape
    Q, R, piv = linalg.qr(A, mode="economic", pivoting=True)
    rank = _numerical_rank(np.diag(R), A.shape)
    if rank == n and m >= n:
        z = linalg.solve_triangular(R, Q.T @ y)
        b = np.empty(n)
        b[piv] = z
        return b, False
    logger.warning("design matrix rank %d < %d columns; ridge fallback", rank, n)
    A_aug = np.vstack([A, math.sqrt(RIDGE_DAMPING) * np.eye(n)])
    y_aug = np.concatenate([y, np.zeros(n)])
    Q, R = linalg.qr(A_aug, mode="economic")
    return linalg.solve_triangular(R, Q.T @ y_aug), True


def fit_matrix(
    X: np.ndarray,
    y: np.ndarray,
    feature_names: Sequence[str],
    target: Target,
    meta: Mapping | None = None,
) -> LinearModel:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ValueError("X must be 2-D with one row per target value")
    if X.shape[1] != len(feature_names):
        raise SchemaError("column count does not match feature names")
    if X.shape[0] < 2:
        raise ValueError("need at least 2 rows to fit")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ValueError("non-finite values in training data")
    A = np.column_stack([np.ones(X.shape[0]), X])
    b, deficient = lstsq_qr(A, y)
    return LinearModel(
        feature_names=tuple(feature_names),
        coefficients=b[1:],
        intercept=float(b[0]),
        target=Target(target),
        train_row_count=int(X.shape[0]),
        condition_warning=deficient,
        meta=dict(meta or {}),
    )


def fit_ols(rows: Sequence[tuple[Mapping[str, float], float]], target: Target = Target.TEMPERATURE) -> LinearModel:
    """Fit from (feature vector, target value) pairs.

    The vectors' key order defines the model's feature order; an
    ``intercept`` key is ignored since the intercept is always fitted.
    """
    if not rows:
        raise ValueError("no training rows")
    names = [k for k in rows[0][0] if k != INTERCEPT]
    expected = set(names)
    X = np.empty((len(rows), len(names)))
    y = np.empty(len(rows))
    for i, (vec, val) in enumerate(rows):
        if set(vec) - {INTERCEPT} != expected:
            raise SchemaError(f"row {i} has a different feature schema")
        X[i] = [vec[k] for k in names]
        y[i] = val
    return fit_matrix(X, y, names, target)


def predict_matrix(model: LinearModel, X: np.ndarray) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != len(model.feature_names):
        raise SchemaError(f"expected {len(model.feature_names)} columns, got {X.shape[1]}")
    # row-wise reduction keeps single-row and batch predictions bitwise equal
    return model.intercept + np.add.reduce(X * model.coefficients, axis=1)


def predict(model: LinearModel, x: Mapping[str, float]) -> float:
    try:
        row = np.array([[x[k] for k in model.feature_names]], dtype=float)
    except KeyError as exc:
        raise SchemaError(f"feature {exc.args[0]!r} missing from input") from None
    return float(predict_matrix(model, row)[0])


def clamp_rh(values):
    return np.clip(values, 0.0, 100.0)
