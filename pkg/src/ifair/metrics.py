"""Utility, individual-fairness and group-fairness measures."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from scipy.spatial.distance import cdist
from scipy.stats import kendalltau, rankdata

CLASSIFICATION_COLUMNS = ("Acc", "AUC", "EqOpp", "Parity", "yNN")
RANKING_COLUMNS = ("MAP", "KT", "yNN", "pct_protected_top10")


class MetricError(ValueError):
    pass


@dataclass
class PredictionSet:
    """Scores, outcomes and the side information the metrics need.

    ``features`` are the non-protected attributes used for neighbor search;
    ``protected`` flags membership in X+.
    """

    scores: np.ndarray
    y: np.ndarray
    protected: np.ndarray | None = None
    features: np.ndarray | None = None
    threshold: float = 0.5

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        if self.protected is not None:
            self.protected = np.asarray(self.protected, dtype=bool)
        if self.features is not None:
            self.features = np.asarray(self.features, dtype=float)
        n = len(self.scores)
        for v in (self.y, self.protected, self.features):
            if v is not None and len(v) != n:
                raise MetricError("prediction set components differ in length")

    @property
    def labels(self) -> np.ndarray:
        return (self.scores >= self.threshold).astype(float)


def nearest_neighbors(features: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k nearest rows (Euclidean, self excluded, ties by index)."""
    D = cdist(features, features, "sqeuclidean")
    np.fill_diagonal(D, np.inf)
    return np.argsort(D, axis=1, kind="stable")[:, :k]


def consistency_yNN(preds: PredictionSet, k: int = 10, use_labels: bool = False) -> float:
    """1 minus the mean absolute prediction gap to each record's k nearest
    neighbors in non-protected feature space."""
    if preds.features is None:
        raise MetricError("yNN needs the non-protected feature matrix")
    M = len(preds.scores)
    if M <= k:
        raise MetricError(f"yNN with k={k} needs more than {k} records, got {M}")
    yhat = preds.labels if use_labels else preds.scores
    nn = nearest_neighbors(preds.features, k)
    return float(1.0 - np.mean(np.abs(yhat[:, None] - yhat[nn])))


def _groups(preds: PredictionSet):
    if preds.protected is None:
        raise MetricError("group metrics need protected-group flags")
    return preds.protected, ~preds.protected


def parity(preds: PredictionSet) -> float | None:
    plus, minus = _groups(preds)
    if not plus.any() or not minus.any():
        return None
    return float(1.0 - abs(preds.scores[plus].mean() - preds.scores[minus].mean()))


def equal_opportunity(preds: PredictionSet) -> float | None:
    """1 - |TPR(X+) - TPR(X-)| on thresholded predictions."""
    plus, minus = _groups(preds)
    pos = preds.y == 1
    if not (plus & pos).any() or not (minus & pos).any():
        return None
    lab = preds.labels
    return float(1.0 - abs(lab[plus & pos].mean() - lab[minus & pos].mean()))


def accuracy(preds: PredictionSet) -> float:
    return float(np.mean(preds.labels == preds.y))


def auc(preds: PredictionSet) -> float | None:
    """Rank-statistic AUC; tied scores count one half."""
    pos = preds.y == 1
    n1, n0 = int(pos.sum()), int((~pos).sum())
    if n1 == 0 or n0 == 0:
        return None
    ranks = rankdata(preds.scores)
    return float((ranks[pos].sum() - n1 * (n1 + 1) / 2) / (n1 * n0))


def kendall_tau(a, b) -> float | None:
    """Tau-b between two score (or rank) vectors over the same items."""
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    if len(a) != len(b):
        raise MetricError("rankings differ in length")
    if len(a) < 2:
        return None
    tau = kendalltau(a, b).statistic
    return None if math.isnan(tau) else float(tau)


def average_precision_at(pred_scores, true_scores, k: int = 10) -> float | None:
    """AP@k of the predicted ordering; relevant = the true top-k items."""
    pred_scores = np.asarray(pred_scores, dtype=float)
    true_scores = np.asarray(true_scores, dtype=float)
    n = len(pred_scores)
    if n < 2:
        return None
    kk = min(k, n)
    relevant = set(np.argsort(-true_scores, kind="stable")[:kk].tolist())
    ranking = np.argsort(-pred_scores, kind="stable")[:kk]
    hits, total = 0, 0.0
    for pos, item in enumerate(ranking, start=1):
        if item in relevant:
            hits += 1
            total += hits / pos
    return total / kk


def map_at_10(queries: Sequence[tuple[np.ndarray, np.ndarray]]) -> float | None:
    """Mean AP@10 over ``(predicted scores, true scores)`` per query."""
    aps = [average_precision_at(p, t, 10) for p, t in queries]
    aps = [a for a in aps if a is not None]
    return float(np.mean(aps)) if aps else None


def protected_share_top(scores, protected, k: int = 10) -> float:
    order = np.argsort(-np.asarray(scores, dtype=float), kind="stable")[:k]
    return float(np.mean(np.asarray(protected, dtype=bool)[order]))


@dataclass
class MetricReport:
    task: str
    values: dict = field(default_factory=dict)

    def __getitem__(self, key):
        return self.values[key]

    def get(self, key, default=None):
        return self.values.get(key, default)

    @property
    def columns(self) -> tuple[str, ...]:
        return CLASSIFICATION_COLUMNS if self.task == "classification" else RANKING_COLUMNS

    def row(self) -> list:
        return [self.values.get(c) for c in self.columns]

    def to_dict(self) -> dict:
        return asdict(self)


def classification_report(preds: PredictionSet, k: int = 10) -> MetricReport:
    return MetricReport("classification", {
        "Acc": accuracy(preds),
        "AUC": auc(preds),
        "EqOpp": equal_opportunity(preds) if preds.protected is not None else None,
        "Parity": parity(preds) if preds.protected is not None else None,
        "yNN": consistency_yNN(preds, k) if len(preds.scores) > k else None,
    })


def _minmax(v: np.ndarray) -> np.ndarray:
    span = v.max() - v.min()
    return np.zeros_like(v) if span == 0 else (v - v.min()) / span


def ranking_report(pred_scores, true_scores, query, protected, features, k: int = 10) -> MetricReport:
    """Per-query MAP/KT/yNN/%protected-in-top-10, averaged over queries.

    Scores are min-max scaled within each query before yNN so that the
    consistency stays in [0, 1].
    """
    pred_scores = np.asarray(pred_scores, dtype=float)
    true_scores = np.asarray(true_scores, dtype=float)
    query = np.zeros(len(pred_scores)) if query is None else np.asarray(query)
    protected = None if protected is None else np.asarray(protected, dtype=bool)
    aps, kts, ynns, shares = [], [], [], []
    for q in np.unique(query):
        idx = np.flatnonzero(query == q)
        if len(idx) < 2:
            continue
        aps.append(average_precision_at(pred_scores[idx], true_scores[idx], k))
        kt = kendall_tau(pred_scores[idx], true_scores[idx])
        if kt is not None:
            kts.append(kt)
        if len(idx) > k:
            ps = PredictionSet(_minmax(pred_scores[idx]), true_scores[idx], features=features[idx])
            ynns.append(consistency_yNN(ps, k))
        if protected is not None:
            shares.append(100.0 * protected_share_top(pred_scores[idx], protected[idx], k))
    mean = lambda v: float(np.mean(v)) if v else None  # noqa: E731
    return MetricReport("ranking", {
        "MAP": mean(aps), "KT": mean(kts), "yNN": mean(ynns), "pct_protected_top10": mean(shares),
    })
