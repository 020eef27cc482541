"""Prototype-based fair representations: distances, soft assignments,
the transformation and the training objective with its analytic gradient.

Notation: ``X`` is M x N data, ``V`` holds K prototypes (K x N), ``alpha``
the N attribute weights of the weighted Minkowski distance, ``U`` the M x K
row-stochastic assignment matrix and ``X_tilde = U @ V``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numba
import numpy as np
from scipy.spatial.distance import cdist, pdist, squareform

from .lbfgs import OptimizerSettings

# guard under the 1/p root so gradients exist at coincident points
EPS_ROOT = 1e-12
MODEL_FORMAT = "ifair-model"
MODEL_VERSION = 1
INIT_SCHEMES = ("ifair-a", "ifair-b")


class NumericalError(ArithmeticError):
    """A loss term or input became non-finite."""


@dataclass
class IFairModel:
    prototypes: np.ndarray
    alpha: np.ndarray
    p: float = 2.0
    protected: tuple[int, ...] = ()

    def __post_init__(self):
        self.prototypes = np.atleast_2d(np.asarray(self.prototypes, dtype=float))
        self.alpha = np.asarray(self.alpha, dtype=float).ravel()
        K, N = self.prototypes.shape
        if K < 1 or N < 1:
            raise ValueError("need at least one prototype and one attribute")
        if self.alpha.shape != (N,):
            raise ValueError(f"alpha has shape {self.alpha.shape}, expected ({N},)")
        if self.p < 1:
            raise ValueError("Minkowski exponent must be >= 1")
        if not (np.all(np.isfinite(self.prototypes)) and np.all(np.isfinite(self.alpha))):
            raise NumericalError("model parameters must be finite")
        if np.any(self.alpha < 0):
            raise ValueError("attribute weights must be nonnegative")
        self.protected = tuple(sorted(int(i) for i in self.protected))

    @property
    def K(self) -> int:
        return self.prototypes.shape[0]

    @property
    def N(self) -> int:
        return self.prototypes.shape[1]

    def assignments(self, X) -> np.ndarray:
        return assignment_matrix(X, self)

    def transform(self, X) -> np.ndarray:
        return transform(X, self)

    def to_dict(self) -> dict:
        return {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "K": self.K,
            "N": self.N,
            "p": self.p,
            "prototypes": self.prototypes.ravel().tolist(),
            "alpha": self.alpha.tolist(),
            "protected": list(self.protected),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "IFairModel":
        if d.get("format") != MODEL_FORMAT or d.get("version") != MODEL_VERSION:
            raise ValueError(f"not a version-{MODEL_VERSION} {MODEL_FORMAT} record")
        V = np.asarray(d["prototypes"], dtype=float).reshape(d["K"], d["N"])
        return cls(V, d["alpha"], d["p"], tuple(d["protected"]))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "IFairModel":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass(frozen=True)
class HyperParams:
    lam: float = 1.0
    mu: float = 1.0
    K: int = 10
    p: float = 2.0
    init: str = "ifair-b"
    restarts: int = 3
    seed: int = 0
    optimizer: OptimizerSettings = field(default_factory=OptimizerSettings)
    # all pairs up to this many rows, otherwise a seeded sample
    max_full_pairs: int = 2000
    pairs_per_row: int = 200

    def __post_init__(self):
        if self.lam < 0 or self.mu < 0:
            raise ValueError("lambda and mu must be nonnegative")
        if self.K < 1:
            raise ValueError("K must be at least 1")
        if self.restarts < 1:
            raise ValueError("need at least one restart")
        if self.p < 1:
            raise ValueError("Minkowski exponent must be >= 1")
        if self.init not in INIT_SCHEMES:
            raise ValueError(f"init scheme must be one of {INIT_SCHEMES}")


@dataclass
class Representation:
    U: np.ndarray
    X_tilde: np.ndarray


def _root(s: np.ndarray, p: float) -> np.ndarray:
    if p == 2:
        return np.sqrt(s + EPS_ROOT) - np.sqrt(EPS_ROOT)
    return (s + EPS_ROOT) ** (1.0 / p) - EPS_ROOT ** (1.0 / p)


def _root_slope(s: np.ndarray, p: float) -> np.ndarray:
    """d root(s) / d s."""
    if p == 2:
        return 0.5 / np.sqrt(s + EPS_ROOT)
    return (s + EPS_ROOT) ** (1.0 / p - 1.0) / p


def distance(a, b, alpha, p: float = 2.0, mask: Sequence[int] | None = None) -> float:
    """Weighted Minkowski distance between two records.

    ``mask`` restricts the sum to the given attribute indices.
    """
    a, b, alpha = (np.asarray(v, dtype=float) for v in (a, b, alpha))
    if a.shape != b.shape or a.shape != alpha.shape:
        raise ValueError("dimension mismatch")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b)) and np.all(np.isfinite(alpha))):
        raise NumericalError("non-finite input to distance")
    if np.any(alpha < 0):
        raise ValueError("attribute weights must be nonnegative")
    diff = np.abs(a - b)
    if mask is not None:
        idx = np.asarray(list(mask), dtype=int)
        diff, alpha = diff[idx], alpha[idx]
    s = float(np.sum(alpha * diff ** p))
    return float(_root(np.float64(s), p))


def softmax_neg(D: np.ndarray) -> np.ndarray:
    """Row-wise softmax of ``-D`` with max subtraction."""
    Z = -np.asarray(D, dtype=float)
    Z = Z - Z.max(axis=-1, keepdims=True)
    E = np.exp(Z)
    return E / E.sum(axis=-1, keepdims=True)


def _prototype_sums(X: np.ndarray, V: np.ndarray, alpha: np.ndarray, p: float) -> np.ndarray:
    """s_ik = sum_n alpha_n |x_in - v_kn|^p."""
    if p == 2 and np.all(alpha >= 0):
        w = np.sqrt(alpha)
        return cdist(X * w, V * w, "sqeuclidean")
    return np.einsum("ikn,n->ik", np.abs(X[:, None, :] - V[None, :, :]) ** p, alpha)


def prototype_distances(X, model: IFairModel) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    return _root(_prototype_sums(X, model.prototypes, model.alpha, model.p), model.p)


def assignment_matrix(X, model: IFairModel) -> np.ndarray:
    """U with u_ik = softmax_k(-d(x_i, v_k))."""
    return softmax_neg(prototype_distances(X, model))


def assignment_probabilities(x, model: IFairModel) -> np.ndarray:
    """Soft assignment of a single record to the K prototypes."""
    return assignment_matrix(np.asarray(x, dtype=float)[None, :], model)[0]


def transform(x, model: IFairModel) -> np.ndarray:
    """Map a record (or a matrix of records) to its fair representation."""
    x = np.asarray(x, dtype=float)
    out = assignment_matrix(np.atleast_2d(x), model) @ model.prototypes
    return out[0] if x.ndim == 1 else out


def represent(X, model: IFairModel) -> Representation:
    U = assignment_matrix(X, model)
    return Representation(U=U, X_tilde=U @ model.prototypes)


def utility_loss(X, X_tilde) -> float:
    """Sum of squared reconstruction errors."""
    X, X_tilde = np.asarray(X, dtype=float), np.asarray(X_tilde, dtype=float)
    if X.shape != X_tilde.shape:
        raise ValueError("shape mismatch")
    return float(np.sum((X - X_tilde) ** 2))


# ---------------------------------------------------------------- pairs


def all_pairs(M: int) -> tuple[np.ndarray, np.ndarray]:
    return np.triu_indices(M, k=1)


def sample_pairs(M: int, n_pairs: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Uniform sample (with replacement) of unordered pairs i < j."""
    rng = np.random.default_rng(seed)
    i = rng.integers(0, M, size=n_pairs)
    j = rng.integers(0, M - 1, size=n_pairs)
    j = np.where(j >= i, j + 1, j)
    return np.minimum(i, j), np.maximum(i, j)


def default_pairs(M: int, hp: HyperParams, seed: int | None = None):
    """None (meaning every pair) for small M, otherwise a seeded sample."""
    if M <= hp.max_full_pairs:
        return None
    return sample_pairs(M, hp.pairs_per_row * M, hp.seed if seed is None else seed)


def _pair_sums(Y: np.ndarray, weights: np.ndarray, p: float, pairs) -> np.ndarray:
    """sum_n w_n |y_in - y_jn|^p over the pairs (condensed order when None)."""
    if pairs is None:
        if Y.shape[0] < 2:
            return np.zeros(0)
        if p == 2 and np.all(weights >= 0):
            return pdist(Y * np.sqrt(weights), "sqeuclidean")
        return pdist(Y * weights ** (1.0 / p), "minkowski", p=p) ** p if np.all(weights >= 0) \
            else _pair_sums(Y, weights, p, all_pairs(Y.shape[0]))
    i, j = pairs
    return (np.abs(Y[i] - Y[j]) ** p) @ weights


def target_distances(X: np.ndarray, protected: Sequence[int], p: float = 2.0, pairs=None) -> np.ndarray:
    """Input-space pair distances over non-protected attributes, unit weights."""
    keep = np.setdiff1d(np.arange(X.shape[1]), np.asarray(list(protected), dtype=int))
    Xs = X[:, keep]
    return _root(_pair_sums(Xs, np.ones(Xs.shape[1]), p, pairs), p)


def fairness_loss(X, X_tilde, model: IFairModel, pairs=None) -> float:
    """Squared mismatch between transformed and fair input-space distances.

    ``pairs`` is None for every unordered pair i < j, an ``(i, j)`` pair of
    index arrays, or a callable ``M -> pairs``.
    """
    X, X_tilde = np.asarray(X, dtype=float), np.asarray(X_tilde, dtype=float)
    if X.shape != X_tilde.shape:
        raise ValueError("shape mismatch")
    if callable(pairs):
        pairs = pairs(X.shape[0])
    target = target_distances(X, model.protected, model.p, pairs)
    got = _root(_pair_sums(X_tilde, model.alpha, model.p, pairs), model.p)
    return float(np.sum((got - target) ** 2))


# ------------------------------------------------------------ objective


@numba.njit(cache=True)
def _dense_pair_terms(gram, sq, target, mu, eps):
    """Fairness loss over i < j plus the symmetric dL/ds matrix and its row sums,
    for p = 2, from the Gram matrix of the weighted transformed records."""
    M = sq.shape[0]
    W = np.zeros((M, M))
    r = np.zeros(M)
    loss = 0.0
    base = np.sqrt(eps)
    for i in range(M):
        for j in range(i + 1, M):
            s = sq[i] + sq[j] - 2.0 * gram[i, j]
            if s < 0.0:
                s = 0.0
            q = np.sqrt(s + eps)
            e = q - base - target[i, j]
            loss += e * e
            w = mu * e / q
            W[i, j] = w
            W[j, i] = w
            r[i] += w
            r[j] += w
    return loss, W, r


class Objective:
    """Training loss for fixed data, evaluated at (V, alpha).

    Target distances and pair indices are computed once. Calling the object
    with a flat parameter vector (prototypes row-major, then alpha) returns
    the loss and its gradient.
    """

    def __init__(self, X, K: int, protected: Sequence[int] = (), lam: float = 1.0,
                 mu: float = 1.0, p: float = 2.0, pairs=None):
        self.X = np.asarray(X, dtype=float)
        self.M, self.N = self.X.shape
        self.K = K
        self.protected = tuple(protected)
        self.lam, self.mu, self.p = float(lam), float(mu), float(p)
        self.pairs = pairs(self.M) if callable(pairs) else pairs
        self.target = target_distances(self.X, self.protected, self.p, self.pairs) if mu else None
        # dense square copy for the p=2 all-pairs path
        self._target_sq = squareform(self.target) if (
            mu and self.pairs is None and self.p == 2 and self.M > 1) else None
        self.last_terms = (0.0, 0.0)

    @classmethod
    def from_hyperparams(cls, X, hp: HyperParams, protected: Sequence[int] = (), pairs="default"):
        X = np.asarray(X, dtype=float)
        if isinstance(pairs, str):
            pairs = default_pairs(X.shape[0], hp)
        return cls(X, hp.K, protected, hp.lam, hp.mu, hp.p, pairs)

    def split(self, theta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.K * self.N + self.N,):
            raise ValueError(f"parameter vector has length {theta.size}, "
                             f"expected {self.K * self.N + self.N}")
        return theta[: self.K * self.N].reshape(self.K, self.N), theta[self.K * self.N:]

    def __call__(self, theta: np.ndarray) -> tuple[float, np.ndarray]:
        V, alpha = self.split(theta)
        loss, gV, ga = self.evaluate(V, alpha)
        return loss, np.concatenate([gV.ravel(), ga])

    def loss(self, theta: np.ndarray) -> float:
        V, alpha = self.split(theta)
        return self.evaluate(V, alpha, gradient=False)[0]

    def evaluate(self, V: np.ndarray, alpha: np.ndarray, gradient: bool = True):
        X, p = self.X, self.p
        fast = p == 2 and np.all(alpha >= 0)
        S = _prototype_sums(X, V, alpha, p)
        D = _root(S, p)
        U = softmax_neg(D)
        Xt = U @ V
        R = Xt - X
        l_util = float(np.sum(R * R)) if self.lam else 0.0

        dense = fast and self._target_sq is not None
        l_fair = 0.0
        if self.mu and self.M > 1:
            if dense:
                # squared distances via the Gram matrix, then one fused pass
                Ws = Xt * np.sqrt(alpha)
                sq = np.einsum("ij,ij->i", Ws, Ws)
                l_fair, W, r = _dense_pair_terms(Ws @ Ws.T, sq, self._target_sq, self.mu, EPS_ROOT)
            else:
                s_t = _pair_sums(Xt, alpha, p, self.pairs)
                err = _root(s_t, p) - self.target
                l_fair = float(err @ err)
        for name, value in (("utility", l_util), ("fairness", l_fair)):
            if not np.isfinite(value):
                raise NumericalError(f"{name} loss is not finite")
        self.last_terms = (l_util, l_fair)
        loss = self.lam * l_util + self.mu * l_fair
        if not gradient:
            return loss, None, None

        G = 2.0 * self.lam * R
        g_alpha = np.zeros(self.N)
        if self.mu and self.M > 1:
            if dense:
                WX = W @ Xt
                G += 2.0 * alpha * (r[:, None] * Xt - WX)
                g_alpha += r @ (Xt * Xt) - np.sum(Xt * WX, axis=0)
            else:
                w = 2.0 * self.mu * err * _root_slope(s_t, p)  # dL/ds per pair
                i, j = self.pairs if self.pairs is not None else all_pairs(self.M)
                delta = Xt[i] - Xt[j]
                mag = np.abs(delta)
                C = w[:, None] * alpha * p * mag ** (p - 1) * np.sign(delta)
                for n in range(self.N):
                    G[:, n] += np.bincount(i, C[:, n], self.M) - np.bincount(j, C[:, n], self.M)
                g_alpha += w @ mag ** p

        gV = U.T @ G
        dU = G @ V.T
        dD = -U * (dU - np.sum(U * dU, axis=1, keepdims=True))
        dS = dD * _root_slope(S, p)
        if fast:
            c = dS.sum(axis=0)
            rs = dS.sum(axis=1)
            gV += -2.0 * alpha * (dS.T @ X - c[:, None] * V)
            g_alpha += rs @ (X * X) - 2.0 * np.sum(X * (dS @ V), axis=0) + c @ (V * V)
        else:
            delta = X[:, None, :] - V[None, :, :]
            mag = np.abs(delta)
            gV -= np.einsum("ik,ikn->kn", dS, mag ** (p - 1) * np.sign(delta)) * alpha * p
            g_alpha += np.einsum("ik,ikn->n", dS, mag ** p)
        return loss, gV, g_alpha


def objective(X, model: IFairModel, hp: HyperParams, pairs="default") -> tuple[float, np.ndarray]:
    """Loss and gradient (w.r.t. prototypes row-major, then alpha) at ``model``.

    ``K`` and ``p`` come from the model; ``hp`` supplies the loss weights and
    the pair-sampling policy.
    """
    X = np.asarray(getattr(X, "X", X), dtype=float)
    if isinstance(pairs, str):
        pairs = default_pairs(X.shape[0], hp)
    obj = Objective(X, model.K, model.protected, hp.lam, hp.mu, model.p, pairs)
    return obj(np.concatenate([model.prototypes.ravel(), model.alpha]))
