"""Linear SVM on standardized voxel features, plus analytic permutation p-maps.

The solver is dual coordinate descent on the box-constrained dual. The bias
is folded in as an extra constant feature, so the problem actually solved is

    min_{w,b}  0.5 * (|w|^2 + b^2) + C * sum_i max(0, 1 - y_i (w.x_i + b))

which is what :func:`primal_objective` reports.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import erfc

from .errors import (
    ClassTooSmall,
    DegenerateGram,
    DimensionMismatch,
    FeatureMismatch,
    NonPositiveC,
    SingleClass,
)
from .rng import substream

DEFAULT_C_GRID = (1e-3, 1e-2, 1e-1, 1.0, 10.0, 100.0)


@dataclass(frozen=True)
class Standardizer:
    mean: np.ndarray
    std: np.ndarray
    constant: np.ndarray

    def transform(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.mean.size:
            raise DimensionMismatch(f"expected {self.mean.size} features, got shape {X.shape}")
        Xs = (X - self.mean) / self.std
        Xs[:, self.constant] = 0.0
        return Xs


def fit_standardizer(X) -> Standardizer:
    """Column means and population standard deviations of ``X``.

    Constant columns get std 1 so they standardize to exactly 0.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise DimensionMismatch("standardizer needs a 2D matrix with at least two rows")
    mean = X.mean(axis=0)
    std = np.sqrt(((X - mean) ** 2).mean(axis=0))
    constant = ~(std > 1e-12 * np.maximum(1.0, np.abs(mean)))
    std = np.where(constant, 1.0, std)
    return Standardizer(mean, std, constant)


def identity_standardizer(d: int) -> Standardizer:
    return Standardizer(np.zeros(d), np.ones(d), np.zeros(d, dtype=bool))


@dataclass
class LinearSvmModel:
    w: np.ndarray
    b: float
    C: float
    standardizer: Standardizer
    meta: dict = field(default_factory=dict)
    objective_trace: list = field(default_factory=list, repr=False)
    dual_trace: list = field(default_factory=list, repr=False)

    @property
    def feature_count(self) -> int:
        return int(self.w.size)


def _as_pm1(y) -> np.ndarray:
    y = np.asarray(y)
    vals = set(np.unique(y).tolist())
    if not vals <= {-1, 1}:
        raise ValueError(f"labels must be -1/+1, got {sorted(vals)}")
    if len(vals) < 2:
        raise SingleClass("both classes must be present")
    return y.astype(np.float64)


def primal_objective(w, b, C, X, y) -> float:
    X = np.asarray(X, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    margins = np.asarray(y, dtype=np.float64) * (X @ w + b)
    return 0.5 * (float(w @ w) + b * b) + C * float(np.maximum(0.0, 1.0 - margins).sum())


def _dual_cd(Z, y, C, tol, max_iter, rng, trace):
    """Coordinate descent on min 0.5 a'Qa - sum(a), 0 <= a <= C."""
    n = Z.shape[0]
    Q = (y[:, None] * y[None, :]) * (Z @ Z.T)
    diag = np.diag(Q).copy()
    alpha = np.zeros(n)
    Qa = np.zeros(n)
    for _ in range(max_iter):
        pg_max, pg_min = -np.inf, np.inf
        for i in rng.permutation(n):
            g = Qa[i] - 1.0
            a = alpha[i]
            if a <= 0.0:
                pg = min(g, 0.0)
            elif a >= C:
                pg = max(g, 0.0)
            else:
                pg = g
            pg_max = max(pg_max, pg)
            pg_min = min(pg_min, pg)
            if pg != 0.0:
                new = min(max(a - g / diag[i], 0.0), C)
                delta = new - a
                if delta != 0.0:
                    alpha[i] = new
                    Qa += delta * Q[:, i]
        if trace is not None:
            trace.append(alpha.copy())
        if pg_max - pg_min < tol:
            break
    return alpha


def train_linear_svm(X, y, C: float, *, standardize: bool = True, tol: float = 1e-6,
                     max_iter: int = 5000, seed: int = 0, record_objective: bool = False) -> LinearSvmModel:
    if not C > 0:
        raise NonPositiveC(f"C must be positive, got {C}")
    y = _as_pm1(y)
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] != y.size:
        raise DimensionMismatch(f"X shape {X.shape} does not match {y.size} labels")
    scaler = fit_standardizer(X) if standardize else identity_standardizer(X.shape[1])
    Xs = scaler.transform(X)
    Z = np.hstack([Xs, np.ones((Xs.shape[0], 1))])
    trace = [] if record_objective else None
    alpha = _dual_cd(Z, y, float(C), tol, max_iter, substream(seed, "svm"), trace)
    wb = Z.T @ (alpha * y)
    model = LinearSvmModel(wb[:-1].astype(np.float32), float(wb[-1]), float(C), scaler)
    if trace is not None:
        for a in trace:
            v = Z.T @ (a * y)
            model.objective_trace.append(primal_objective(v[:-1], v[-1], C, Xs, y))
            model.dual_trace.append(0.5 * float(v @ v) - float(a.sum()))
    return model


def decision_scores(model: LinearSvmModel, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.shape[1] != model.feature_count:
        raise DimensionMismatch(f"model has {model.feature_count} features, input has {X.shape[1]}")
    return model.standardizer.transform(X) @ model.w.astype(np.float64) + model.b


def predict_labels(scores) -> np.ndarray:
    """Sign of the decision score with ties going to +1."""
    return np.where(np.asarray(scores) >= 0, 1, -1)


def stratified_folds(y, k: int, seed: int) -> list[np.ndarray]:
    y = np.asarray(y)
    rng = substream(seed, "folds")
    folds = [[] for _ in range(k)]
    for lab in np.unique(y):
        idx = rng.permutation(np.flatnonzero(y == lab))
        if idx.size < k:
            raise ClassTooSmall(f"class {lab} has {idx.size} subjects, fewer than {k} folds")
        for f, part in enumerate(np.array_split(idx, k)):
            folds[f].extend(part.tolist())
    return [np.sort(np.asarray(f)) for f in folds]


def cv_accuracy(X, y, C, folds, **train_kw) -> float:
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    accs = []
    for test_idx in folds:
        train_idx = np.setdiff1d(np.arange(y.size), test_idx)
        model = train_linear_svm(X[train_idx], y[train_idx], C, **train_kw)
        pred = predict_labels(decision_scores(model, X[test_idx]))
        accs.append(np.mean(pred == y[test_idx]))
    return float(np.mean(accs))


def select_C(X, y, grid=DEFAULT_C_GRID, seed: int = 0, n_folds: int = 5, **train_kw) -> float:
    """Grid value with the best mean stratified k-fold accuracy; ties go to the smallest C."""
    grid = sorted(float(c) for c in grid)
    if not grid:
        raise ValueError("C grid is empty")
    y = _as_pm1(y)
    if len(grid) == 1:
        return grid[0]
    folds = stratified_folds(y, n_folds, seed)
    best_c, best_acc = grid[0], -1.0
    for c in grid:
        acc = cv_accuracy(X, y, c, folds, seed=seed, **train_kw)
        if acc > best_acc + 1e-12:
            best_c, best_acc = c, acc
    return best_c


# -- analytic p-maps ------------------------------------------------------------

@dataclass(frozen=True)
class PMap:
    p: np.ndarray
    alpha: float
    significant: np.ndarray
    weights: np.ndarray


def coefficient_matrix(X) -> np.ndarray:
    """Rows c_j such that the minimum-norm weight is ``w_j = c_j . y``."""
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    gram = X @ X.T
    eps = 1e-8 * np.trace(gram) / n
    A = gram + eps * np.eye(n)
    if not eps > 0 or np.linalg.cond(A) > 1e12:
        raise DegenerateGram("X X^T is numerically singular")
    return np.linalg.solve(A, X).T


def permutation_moments(c, y):
    """Exact mean and variance of ``c . y[perm]`` over uniform label permutations.

    ``c`` may be a matrix of coefficient rows; moments are computed per row.
    """
    c = np.asarray(c, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = y.size
    sc = c.sum(axis=-1)
    sc2 = (c * c).sum(axis=-1)
    sy, sy2 = y.sum(), float(y @ y)
    mean = sc * sy / n
    var = (n * sc2 - sc * sc) * (n * sy2 - sy * sy) / (n * n * (n - 1))
    return mean, np.maximum(var, 0.0)


def analytic_pmap(X, y, alpha: float = 0.05) -> PMap:
    """Two-sided p-values of the min-norm SVM weight under a Gaussian permutation null.

    No multiple-comparison correction is applied.
    """
    y = _as_pm1(y)
    X = np.asarray(X, dtype=np.float64)
    if X.shape[0] < 4:
        raise DimensionMismatch("analytic p-maps need at least 4 subjects")
    K = coefficient_matrix(X)
    w = K @ y
    mean, var = permutation_moments(K, y)
    sd = np.sqrt(var)
    scale = np.maximum(np.abs(K).max(axis=1), 1e-300)
    degenerate = sd <= 1e-12 * scale * math.sqrt(y.size)
    z = np.abs(w - mean) / np.where(degenerate, 1.0, sd)
    p = np.where(degenerate, 1.0, erfc(z / math.sqrt(2.0)))
    p = np.clip(p, 0.0, 1.0)
    return PMap(p, float(alpha), p <= alpha, w)


# -- serialization ---------------------------------------------------------------

def _pair(path):
    p = Path(path)
    if p.suffix in (".json", ".raw"):
        p = p.with_suffix("")
    return p.with_suffix(".json"), p.with_suffix(".raw")


def save_svm(model: LinearSvmModel, path) -> None:
    header_path, raw_path = _pair(path)
    header = {
        "kind": "linear_svm",
        "C": model.C,
        "b": model.b,
        "feature_count": model.feature_count,
        "standardizer": {
            "mean": model.standardizer.mean.tolist(),
            "std": model.standardizer.std.tolist(),
            "constant": model.standardizer.constant.astype(int).tolist(),
        },
        "meta": model.meta,
    }
    raw_path.write_bytes(np.ascontiguousarray(model.w, dtype="<f4").tobytes())
    header_path.write_text(json.dumps(header, sort_keys=True) + "\n")


def load_svm(path) -> LinearSvmModel:
    header_path, raw_path = _pair(path)
    header = json.loads(header_path.read_text())
    if header.get("kind") != "linear_svm":
        raise FeatureMismatch(f"{header_path} is not a linear SVM model")
    w = np.frombuffer(raw_path.read_bytes(), dtype="<f4").astype(np.float32)
    if w.size != header["feature_count"]:
        raise FeatureMismatch(f"{raw_path}: {w.size} weights for {header['feature_count']} features")
    st = header["standardizer"]
    scaler = Standardizer(np.asarray(st["mean"], dtype=np.float64), np.asarray(st["std"], dtype=np.float64),
                          np.asarray(st["constant"], dtype=bool))
    return LinearSvmModel(w, float(header["b"]), float(header["C"]), scaler, header.get("meta", {}))
