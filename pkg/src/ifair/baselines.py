"""Comparison representations (truncated SVD) and a binomial-constraint
group-fair re-ranker with score interpolation for promoted candidates."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Iterable

import numpy as np
from scipy.stats import binom

DEFAULT_ALPHA = 0.1


class InfeasibleRanking(ValueError):
    def __init__(self, rank: int, required: int, available: int):
        super().__init__(f"rank {rank} needs {required} protected candidates, only {available} exist")
        self.rank = rank


@dataclass
class SVDRepresentation:
    K: int
    Z: np.ndarray  # M x K left factors scaled by singular values
    components: np.ndarray  # N x K right factors, orthonormal columns
    singular_values: np.ndarray

    @property
    def reconstruction(self) -> np.ndarray:
        return self.Z @ self.components.T

    def project(self, X) -> np.ndarray:
        """Coordinates of new rows in the learned subspace."""
        return np.asarray(X, dtype=float) @ self.components

    def reconstruct(self, X) -> np.ndarray:
        return self.project(X) @ self.components.T


def svd_reduce(table, K: int) -> SVDRepresentation:
    """Best rank-K approximation of a DataTable (or matrix) without centering."""
    X = np.asarray(getattr(table, "X", table), dtype=float)
    M, N = X.shape
    if not 1 <= K <= min(M, N):
        raise ValueError(f"K must lie in [1, {min(M, N)}], got {K}")
    _, s, Vt = np.linalg.svd(X, full_matrices=False)
    V = Vt[:K].T
    # fix the sign so the largest-magnitude loading of each component is positive
    flip = np.sign(V[np.abs(V).argmax(axis=0), np.arange(K)])
    V = V * np.where(flip == 0, 1.0, flip)
    return SVDRepresentation(K, X @ V, V, s[:K])


def min_protected_at(k: int, p: float, alpha: float = DEFAULT_ALPHA) -> int:
    """Smallest protected count in a top-k prefix that a one-sided binomial
    test at level alpha does not reject: the largest m with
    P[Binom(k, p) <= m - 1] <= alpha."""
    if k < 1:
        raise ValueError("k must be at least 1")
    if not (0 < p < 1 and 0 < alpha < 1):
        raise ValueError("p and alpha must lie in (0, 1)")
    return _min_protected(int(k), float(p), float(alpha))


@lru_cache(maxsize=65536)
def _min_protected(k: int, p: float, alpha: float) -> int:
    # start from the quantile, then settle the boundary exactly
    m = int(min(max(binom.ppf(alpha, k, p), 0), k))
    while m > 0 and binom.cdf(m - 1, k, p) > alpha:
        m -= 1
    while m < k and binom.cdf(m, k, p) <= alpha:
        m += 1
    return m


def min_protected_table(n: int, p: float, alpha: float = DEFAULT_ALPHA) -> np.ndarray:
    """Required counts for every prefix length 1..n."""
    return np.array([min_protected_at(k, p, alpha) for k in range(1, n + 1)], dtype=int)


@dataclass
class RankedList:
    ids: list
    scores: np.ndarray
    protected: np.ndarray
    query: object = None

    def __post_init__(self):
        self.ids = list(self.ids)
        self.scores = np.asarray(self.scores, dtype=float)
        self.protected = np.asarray(self.protected, dtype=bool)
        if not len(self.ids) == len(self.scores) == len(self.protected):
            raise ValueError("ranked list components differ in length")
        if len(set(self.ids)) != len(self.ids):
            raise ValueError("candidate ids must be unique")
        if np.any(np.diff(self.scores) > 0):
            raise ValueError("scores must be non-increasing")

    def __len__(self):
        return len(self.ids)

    @classmethod
    def from_scores(cls, ids, scores, protected, query=None) -> "RankedList":
        scores = np.asarray(scores, dtype=float)
        order = np.argsort(-scores, kind="stable")
        return cls([list(ids)[i] for i in order], scores[order], np.asarray(protected, dtype=bool)[order],
                   query)

    def protected_share_top(self, k: int = 10) -> float:
        return float(self.protected[:k].mean()) if len(self) else 0.0


def fair_rerank(ranked: RankedList, p: float, alpha: float = DEFAULT_ALPHA,
                strict: bool = True) -> RankedList:
    """Greedy two-queue merge guaranteeing the binomial minimum count of
    protected candidates in every prefix.

    A protected candidate promoted ahead of a better non-protected one gets a
    placeholder score, later filled by linear interpolation between the
    nearest assigned scores above and below (clamped at the list ends). With
    ``strict=False`` an unsatisfiable prefix is skipped instead of raising.
    """
    n = len(ranked)
    need = min_protected_table(n, p, alpha) if n else np.zeros(0, int)
    prot = [i for i in range(n) if ranked.protected[i]]
    other = [i for i in range(n) if not ranked.protected[i]]
    order, placeholder = [], []
    pi = oi = 0
    for k in range(1, n + 1):
        short = pi < need[k - 1]
        if short and pi >= len(prot) and strict:
            raise InfeasibleRanking(k, int(need[k - 1]), len(prot))
        # the input is score-sorted, so the earlier head is the better one
        take_prot = oi >= len(other) or (pi < len(prot) and (short or prot[pi] < other[oi]))
        if take_prot:
            placeholder.append(oi < len(other) and other[oi] < prot[pi])
            order.append(prot[pi])
            pi += 1
        else:
            placeholder.append(False)
            order.append(other[oi])
            oi += 1
    scores = ranked.scores[order].copy()
    scores = _interpolate(scores, np.array(placeholder, dtype=bool))
    return RankedList([ranked.ids[i] for i in order], scores, ranked.protected[order], ranked.query)


def _interpolate(scores: np.ndarray, holes: np.ndarray) -> np.ndarray:
    if not holes.any():
        return scores
    known = np.flatnonzero(~holes)
    if known.size == 0:
        return scores
    pos = np.arange(len(scores))
    # np.interp clamps to the end values outside the known range
    scores[holes] = np.interp(pos[holes], known, scores[known])
    return scores


def rerank_queries(lists: Iterable[RankedList], p: float, alpha: float = DEFAULT_ALPHA,
                   strict: bool = False) -> list[RankedList]:
    return [fair_rerank(r, p, alpha, strict) for r in lists]


RANKED_COLUMNS = ("query", "candidate", "score", "protected", "rank")


def write_ranked_lists(lists: Iterable[RankedList], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(RANKED_COLUMNS)
        for r in lists:
            for rank, (cid, s, a) in enumerate(zip(r.ids, r.scores, r.protected), start=1):
                w.writerow(["" if r.query is None else r.query, cid, repr(float(s)), int(a), rank])


def read_ranked_lists(path: str | Path) -> list[RankedList]:
    groups: dict = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            groups.setdefault(row["query"], []).append(row)
    out = []
    for q, rows in groups.items():
        rows.sort(key=lambda r: int(r["rank"]))
        out.append(RankedList([r["candidate"] for r in rows], [float(r["score"]) for r in rows],
                              [r["protected"] in ("1", "True", "true") for r in rows], q or None))
    return out
