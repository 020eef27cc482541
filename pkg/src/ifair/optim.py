"""Training prototype models: initialization, parameter packing and the
best-of-restarts L-BFGS fit."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import INIT_SCHEMES, HyperParams, IFairModel, NumericalError, Objective, default_pairs
from .lbfgs import minimize_lbfgs

logger = logging.getLogger(__name__)

PROTECTED_INIT = 1e-6


class OptimizationError(RuntimeError):
    def __init__(self, message, diagnostics=()):
        super().__init__(message)
        self.diagnostics = list(diagnostics)


def pack(model: IFairModel) -> np.ndarray:
    """Flatten to prototypes (row-major) followed by alpha."""
    return np.concatenate([model.prototypes.ravel(), model.alpha])


def unpack(theta, K: int, N: int, p: float = 2.0, protected: Sequence[int] = ()) -> IFairModel:
    theta = np.asarray(theta, dtype=float)
    if theta.ndim != 1 or theta.size != K * N + N:
        raise ValueError(f"expected a vector of length {K * N + N}, got shape {theta.shape}")
    return IFairModel(theta[: K * N].reshape(K, N).copy(), theta[K * N:].copy(), p, tuple(protected))


def init_model(scheme: str, K: int, N: int, protected: Sequence[int] = (), seed: int = 0,
               p: float = 2.0) -> IFairModel:
    """Uniform(0, 1) prototypes and weights; ``ifair-b`` starts the weights of
    protected attributes at a small positive value instead."""
    if scheme not in INIT_SCHEMES:
        raise ValueError(f"unknown init scheme {scheme!r}")
    rng = np.random.default_rng(seed)
    V = rng.uniform(0.0, 1.0, size=(K, N))
    alpha = rng.uniform(0.0, 1.0, size=N)
    if scheme == "ifair-b" and len(protected):
        alpha[list(protected)] = PROTECTED_INIT
    return IFairModel(V, alpha, p, tuple(protected))


@dataclass
class RestartRecord:
    seed: int
    initial_loss: float
    final_loss: float
    n_iter: int
    grad_norm: float
    status: str
    trace: list = field(default_factory=list, repr=False)


@dataclass
class FitResult:
    model: IFairModel
    loss: float
    n_iter: int
    grad_norm: float
    history: list[RestartRecord]

    @property
    def seeds(self) -> list[int]:
        return [r.seed for r in self.history]

    def write_trace(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["restart", "iteration", "loss", "grad_norm"])
            for r, rec in enumerate(self.history):
                for it, loss, gnorm in rec.trace:
                    w.writerow([r, it, repr(loss), repr(gnorm)])


class _SquaredWeights:
    """Objective in (V, beta) with alpha = beta**2, keeping alpha >= 0."""

    def __init__(self, obj: Objective):
        self.obj = obj
        self.KN = obj.K * obj.N

    def to_internal(self, model: IFairModel) -> np.ndarray:
        return np.concatenate([model.prototypes.ravel(), np.sqrt(model.alpha)])

    def to_external(self, z: np.ndarray) -> np.ndarray:
        return np.concatenate([z[: self.KN], z[self.KN:] ** 2])

    def __call__(self, z):
        f, g = self.obj(self.to_external(z))
        g[self.KN:] *= 2.0 * z[self.KN:]
        return f, g


def fit(X, hp: HyperParams, protected: Sequence[int] | None = None, pairs="default") -> FitResult:
    """Run ``hp.restarts`` optimizations and keep the lowest training loss.

    ``X`` is a DataTable (its protected set is used) or a plain matrix with
    ``protected`` given explicitly.
    """
    if protected is None:
        protected = getattr(X, "protected", ())
    X = np.asarray(getattr(X, "X", X), dtype=float)
    M, N = X.shape
    if isinstance(pairs, str):
        pairs = default_pairs(M, hp)
    obj = Objective(X, hp.K, protected, hp.lam, hp.mu, hp.p, pairs)
    wrapped = _SquaredWeights(obj)

    history, best = [], None
    for r in range(hp.restarts):
        seed = hp.seed + r
        start = init_model(hp.init, hp.K, N, protected, seed, hp.p)
        z0 = wrapped.to_internal(start)
        try:
            f0 = wrapped(z0)[0]
            res = minimize_lbfgs(wrapped, z0, hp.optimizer)
            model = IFairModel(res.x[: wrapped.KN].reshape(hp.K, N), res.x[wrapped.KN:] ** 2,
                               hp.p, tuple(protected))
            rec = RestartRecord(seed, float(f0), res.fun, res.n_iter, res.grad_norm,
                                res.message, res.trace)
        except (NumericalError, FloatingPointError) as exc:
            logger.warning("restart %d (seed %d) diverged: %s", r, seed, exc)
            history.append(RestartRecord(seed, float("nan"), float("nan"), 0, float("nan"),
                                         f"diverged: {exc}"))
            continue
        history.append(rec)
        if best is None or rec.final_loss < best[1].final_loss:
            best = (model, rec)
    if best is None:
        raise OptimizationError("all restarts diverged", [h.status for h in history])
    model, rec = best
    return FitResult(model=model, loss=rec.final_loss, n_iter=rec.n_iter,
                     grad_norm=rec.grad_norm, history=history)
