"""Linear downstream models trained on any representation: logistic
regression for classification, ridge regression for ranking scores."""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import expit

from .lbfgs import OptimizerSettings, minimize_lbfgs

LINEAR_FORMAT = "linear-model"
LINEAR_VERSION = 1
KINDS = ("logistic", "least-squares")
DEFAULT_L2 = 1e-4
SCORE_WEIGHT_GRID = (0.0, 0.25, 0.5, 0.75, 1.0)


class TrainingError(ValueError):
    pass


@dataclass(frozen=True)
class LinearModel:
    weights: np.ndarray
    bias: float
    kind: str
    l2: float = DEFAULT_L2

    def __post_init__(self):
        object.__setattr__(self, "weights", np.asarray(self.weights, dtype=float))
        if self.kind not in KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.l2 < 0:
            raise ValueError("l2 strength must be non-negative")
        if not (np.all(np.isfinite(self.weights)) and np.isfinite(self.bias)):
            raise ValueError("model parameters must be finite")

    def to_dict(self) -> dict:
        return {"format": LINEAR_FORMAT, "version": LINEAR_VERSION, "kind": self.kind,
                "l2": self.l2, "bias": self.bias, "weights": self.weights.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "LinearModel":
        if d.get("format") != LINEAR_FORMAT or d.get("version") != LINEAR_VERSION:
            raise ValueError(f"not a version-{LINEAR_VERSION} {LINEAR_FORMAT} record")
        return cls(np.asarray(d["weights"], dtype=float), float(d["bias"]), d["kind"], float(d["l2"]))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "LinearModel":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _as_matrix(Z) -> np.ndarray:
    Z = np.asarray(Z, dtype=float)
    if Z.ndim == 1:
        Z = Z[:, None]
    if Z.ndim != 2:
        raise ValueError("representation must be a 2-D matrix")
    return Z


def logistic_loss(theta: np.ndarray, Z: np.ndarray, y: np.ndarray, l2: float):
    """Mean negative log-likelihood plus (l2/2)|w|^2; the bias is last and
    not penalized."""
    w, b = theta[:-1], theta[-1]
    z = Z @ w + b
    # log(1 + e^z) - y z, stable for large |z|
    f = np.mean(np.logaddexp(0.0, z) - y * z) + 0.5 * l2 * (w @ w)
    r = (expit(z) - y) / len(y)
    g = np.empty_like(theta)
    g[:-1] = Z.T @ r + l2 * w
    g[-1] = r.sum()
    return float(f), g


def train_logistic(Z, y, l2: float = DEFAULT_L2, settings: OptimizerSettings | None = None) -> LinearModel:
    Z = _as_matrix(Z)
    y = np.asarray(y, dtype=float)
    if len(y) != len(Z):
        raise ValueError("labels and representation differ in length")
    if not np.all((y == 0) | (y == 1)):
        raise TrainingError("labels must be binary 0/1")
    if y.min() == y.max():
        raise TrainingError("logistic regression needs both classes")
    if l2 < 0:
        raise ValueError("l2 strength must be non-negative")
    settings = settings or OptimizerSettings(max_iter=5000, gtol=1e-7, ftol=1e-15)
    res = minimize_lbfgs(lambda t: logistic_loss(t, Z, y, l2), np.zeros(Z.shape[1] + 1), settings)
    return LinearModel(res.x[:-1], float(res.x[-1]), "logistic", l2)


def train_ranker(Z, scores, l2: float = DEFAULT_L2) -> LinearModel:
    """Ridge regression minimizing mean squared residual/2 + (l2/2)|w|^2 with
    an unpenalized bias, solved in closed form on centered data."""
    Z = _as_matrix(Z)
    s = np.asarray(scores, dtype=float)
    M = len(s)
    if M != len(Z):
        raise ValueError("scores and representation differ in length")
    if M < 2:
        raise TrainingError("ranker needs at least two rows")
    if l2 < 0:
        raise ValueError("l2 strength must be non-negative")
    zm, sm = Z.mean(axis=0), s.mean()
    Zc, sc = Z - zm, s - sm
    if l2 == 0:
        w = np.linalg.lstsq(Zc, sc, rcond=None)[0]
    else:
        A = Zc.T @ Zc / M + l2 * np.eye(Z.shape[1])
        w = np.linalg.solve(A, Zc.T @ sc / M)
    return LinearModel(w, float(sm - zm @ w), "least-squares", l2)


def predict(model: LinearModel, Z) -> np.ndarray:
    Z = _as_matrix(Z)
    if Z.shape[1] != len(model.weights):
        raise ValueError(f"model expects width {len(model.weights)}, got {Z.shape[1]}")
    z = Z @ model.weights + model.bias
    return expit(z) if model.kind == "logistic" else z


def score_xing_style(features, weights: Sequence[float] | None = None) -> np.ndarray:
    """Deserved score as a weighted sum of min-max normalized columns.

    ``features`` is an (M, c) matrix or a sequence of c columns (work
    experience, education experience, profile views). Uniform weights by
    default.
    """
    if isinstance(features, (list, tuple)):
        features = np.column_stack([np.asarray(f, dtype=float) for f in features])
    F = _as_matrix(features)
    w = np.ones(F.shape[1]) if weights is None or len(weights) == 0 else np.asarray(weights, dtype=float)
    if w.shape != (F.shape[1],):
        raise ValueError("one weight per score column is required")
    if np.any(w < 0):
        raise ValueError("score weights must be non-negative")
    lo, hi = np.nanmin(F, axis=0), np.nanmax(F, axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    return ((F - lo) / span) @ w


def score_weight_grid(n_columns: int = 3, values: Sequence[float] = SCORE_WEIGHT_GRID):
    """All weight vectors over the grid, excluding the all-zero vector."""
    return [w for w in itertools.product(values, repeat=n_columns) if any(w)]
