"""Two-component Gaussian mixture with three protected-membership schemes,
used to check that learned representations ignore group membership."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from itertools import combinations
from pathlib import Path

import numpy as np

from .baselines import svd_reduce
from .core import HyperParams, IFairModel, transform
from .data import DataTable
from .downstream import predict, train_logistic
from .metrics import PredictionSet, classification_report
from .optim import fit

SCHEMES = ("random", "x1", "x2")
COLUMNS = ("X1", "X2", "A")
A_COLUMN = 2
# with equal weights the fairness term alone cannot pin the scale of the
# protected weight; a strong utility term relative to fairness does
STUDY_LAM = 100.0
STUDY_MU = 0.1


@dataclass(frozen=True)
class SynthConfig:
    n: int = 100
    means: tuple = ((2.0, 2.0), (4.0, 4.0))
    variance: float = 1.0
    covariance: float = 0.95  # off-diagonal of the second component
    weights: tuple = (0.5, 0.5)
    scheme: str = "random"
    protected_rate: float = 0.3
    threshold: float = 3.0
    seed: int = 0

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown membership scheme {self.scheme!r}")
        if self.n < 1:
            raise ValueError("n must be positive")
        if abs(sum(self.weights) - 1) > 1e-12 or min(self.weights) < 0:
            raise ValueError("mixture weights must be a probability vector")
        if not 0 < self.protected_rate < 1:
            raise ValueError("protected rate must lie in (0, 1)")
        np.linalg.cholesky(self.cov(1))

    def cov(self, component: int) -> np.ndarray:
        c = self.covariance if component == 1 else 0.0
        return np.array([[self.variance, c], [c, self.variance]])


def generate(config: SynthConfig = SynthConfig()) -> DataTable:
    """Columns X1, X2, A with Y = mixture component.

    The features come from one seeded stream and A from another, so the three
    schemes share identical (X1, X2, Y) under a common seed.
    """
    rng = np.random.default_rng([config.seed, 0])
    comp = (rng.random(config.n) >= config.weights[0]).astype(int)
    pts = np.empty((config.n, 2))
    for c in (0, 1):
        idx = comp == c
        pts[idx] = rng.multivariate_normal(config.means[c], config.cov(c), size=int(idx.sum()),
                                           method="cholesky")
    if config.scheme == "random":
        a = np.random.default_rng([config.seed, 1]).random(config.n) < config.protected_rate
    elif config.scheme == "x1":
        a = pts[:, 0] <= config.threshold
    else:
        a = pts[:, 1] <= config.threshold
    X = np.column_stack([pts, a.astype(float)])
    return DataTable(X=X, y=comp.astype(float), columns=COLUMNS, protected=(A_COLUMN,), group=a)


def generate_all(config: SynthConfig = SynthConfig()) -> dict[str, DataTable]:
    return {s: generate(replace(config, scheme=s)) for s in SCHEMES}


def flip_protected(table: DataTable) -> DataTable:
    X = table.X.copy()
    X[:, A_COLUMN] = 1.0 - X[:, A_COLUMN]
    return table.with_matrix(X)


def flip_shift(model: IFairModel, table: DataTable) -> np.ndarray:
    """Per-point Euclidean change of the transformed point when A is flipped."""
    return np.linalg.norm(transform(flip_protected(table).X, model) - transform(table.X, model), axis=1)


def zero_protected(model: IFairModel) -> IFairModel:
    alpha = model.alpha.copy()
    alpha[list(model.protected)] = 0.0
    return IFairModel(model.prototypes, alpha, model.p, model.protected)


def cross_scheme_displacement(reps: dict[str, np.ndarray]) -> float:
    """Mean per-point distance between representations of the same points
    under different schemes, averaged over scheme pairs."""
    pairs = list(combinations(sorted(reps), 2))
    return float(np.mean([np.linalg.norm(reps[a] - reps[b], axis=1).mean() for a, b in pairs]))


@dataclass
class InvarianceReport:
    displacement: float
    svd_displacement: float
    flip_shift: dict[str, float]
    flip_shift_zeroed: dict[str, float]
    protected_alpha: dict[str, float]
    metrics: dict[str, dict] = field(default_factory=dict)
    config: dict = field(default_factory=dict)


def invariance_report(models: dict[str, IFairModel], tables: dict[str, DataTable],
                      svd_rank: int | None = None) -> InvarianceReport:
    """Cross-scheme displacement (against a full-data SVD reconstruction of
    the same rank) and per-point flip shifts, raw and with protected weights
    zeroed."""
    reps = {s: transform(tables[s].X, models[s]) for s in models}
    K = svd_rank or min(2, tables[next(iter(tables))].n_features)
    svd = {s: svd_reduce(tables[s], K).reconstruction for s in models}
    return InvarianceReport(
        displacement=cross_scheme_displacement(reps),
        svd_displacement=cross_scheme_displacement(svd),
        flip_shift={s: float(flip_shift(models[s], tables[s]).max()) for s in models},
        flip_shift_zeroed={s: float(flip_shift(zero_protected(models[s]), tables[s]).max())
                           for s in models},
        protected_alpha={s: float(models[s].alpha[list(models[s].protected)].max()) for s in models},
    )


def scheme_metrics(model: IFairModel, table: DataTable, k: int = 10) -> dict:
    """Logistic regression on the transformed data, scored in-sample."""
    Z = transform(table.X, model)
    clf = train_logistic(Z, table.y)
    preds = PredictionSet(predict(clf, Z), table.y, table.group, table.X_star)
    return classification_report(preds, k).values


def run_study(config: SynthConfig = SynthConfig(), hp: HyperParams | None = None) -> tuple:
    """Fit one iFair-b model per scheme with shared hyperparameters and seed.

    Returns (report, models, tables).
    """
    hp = hp or HyperParams(lam=STUDY_LAM, mu=STUDY_MU, K=2, init="ifair-b", seed=config.seed)
    tables = generate_all(config)
    models = {s: fit(t, hp).model for s, t in tables.items()}
    report = invariance_report(models, tables, svd_rank=min(hp.K, 3))
    report.metrics = {s: scheme_metrics(models[s], tables[s]) for s in SCHEMES}
    report.config = {"means": [list(m) for m in config.means], "weights": list(config.weights),
                     "covariance": config.covariance, "n": config.n, "seed": config.seed,
                     "K": hp.K, "lam": hp.lam, "mu": hp.mu}
    return report, models, tables


def write_points(path: str | Path, tables: dict[str, DataTable], models: dict[str, IFairModel]) -> None:
    """Raw and transformed coordinates per scheme, for external plotting."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["scheme", "row", "X1", "X2", "A", "Y", "T1", "T2", "TA"])
        for s in SCHEMES:
            if s not in tables:
                continue
            T = transform(tables[s].X, models[s])
            for i, (x, y, t) in enumerate(zip(tables[s].X, tables[s].y, T)):
                w.writerow([s, i, *map(repr, map(float, x)), int(y), *map(repr, map(float, t))])
