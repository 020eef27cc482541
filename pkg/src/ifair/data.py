"""Tabular ingestion: CSV + JSON dataset config -> encoded, normalized splits."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Sequence

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

COLUMN_KINDS = ("numeric", "categorical", "binary")
TASK_KINDS = ("classification", "ranking")
_GROUP_OPS = {
    "==": lambda s, v: s == v,
    "!=": lambda s, v: s != v,
    "<=": lambda s, v: s <= v,
    "<": lambda s, v: s < v,
    ">=": lambda s, v: s >= v,
    ">": lambda s, v: s > v,
}


class SchemaError(ValueError):
    """Dataset config and CSV disagree, or the config itself is malformed."""


class DataError(ValueError):
    """The table is unusable after cleaning."""


@dataclass(frozen=True)
class ColumnSpec:
    name: str
    kind: str = "numeric"
    protected: bool = False
    # value mapped to 1 for string-valued binary columns
    positive: Any = None

    def __post_init__(self):
        if self.kind not in COLUMN_KINDS:
            raise SchemaError(f"column {self.name!r}: unknown kind {self.kind!r}")


@dataclass(frozen=True)
class GroupRule:
    """Membership rule for the protected group X+ used by group metrics."""

    column: str
    op: str = "=="
    value: Any = 1

    def __post_init__(self):
        if self.op not in _GROUP_OPS:
            raise SchemaError(f"unsupported group operator {self.op!r}")

    def evaluate(self, values: pd.Series) -> np.ndarray:
        return np.asarray(_GROUP_OPS[self.op](values, self.value), dtype=bool)


@dataclass(frozen=True)
class FeatureSchema:
    columns: tuple[ColumnSpec, ...]
    outcome: str
    task: str = "classification"
    group: GroupRule | None = None
    query: str | None = None
    outcome_positive: Any = None
    # ranking tasks may derive the outcome as a weighted sum of columns
    score_columns: tuple[str, ...] = ()
    score_weights: tuple[float, ...] = ()

    def __post_init__(self):
        if self.task not in TASK_KINDS:
            raise SchemaError(f"unknown task kind {self.task!r}")
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise SchemaError("duplicate column names in schema")
        if self.outcome in names:
            raise SchemaError("outcome column cannot also be a feature column")
        if self.score_columns and len(self.score_columns) != len(self.score_weights):
            raise SchemaError("score_columns and score_weights differ in length")

    @property
    def protected_columns(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.columns if c.protected)

    @classmethod
    def from_dict(cls, cfg: dict) -> "FeatureSchema":
        try:
            columns = tuple(ColumnSpec(**c) for c in cfg["columns"])
            outcome = cfg["outcome"]
        except (KeyError, TypeError) as exc:
            raise SchemaError(f"malformed dataset config: {exc}") from exc
        group = GroupRule(**cfg["group"]) if cfg.get("group") else None
        score = cfg.get("score") or {}
        return cls(
            columns=columns,
            outcome=outcome,
            task=cfg.get("task", "classification"),
            group=group,
            query=cfg.get("query"),
            outcome_positive=cfg.get("outcome_positive"),
            score_columns=tuple(score.get("columns", ())),
            score_weights=tuple(float(w) for w in score.get("weights", ())),
        )


@dataclass
class DataTable:
    """Encoded numeric matrix with the bookkeeping needed downstream.

    ``encoding`` maps each raw column to the names of the columns it was
    unfolded into; ``categories`` holds the category labels of unfolded
    categorical columns in the same order.
    """

    X: np.ndarray
    y: np.ndarray
    columns: tuple[str, ...]
    protected: tuple[int, ...] = ()
    row_ids: np.ndarray | None = None
    group: np.ndarray | None = None
    query: np.ndarray | None = None
    task: str = "classification"
    encoding: dict[str, tuple[str, ...]] = field(default_factory=dict)
    categories: dict[str, tuple[str, ...]] = field(default_factory=dict)
    scale: np.ndarray | None = None
    n_dropped: int = 0

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        if self.X.ndim != 2:
            raise DataError("X must be two-dimensional")
        self.y = np.asarray(self.y, dtype=float)
        if self.row_ids is None:
            self.row_ids = np.arange(len(self.X))
        if len(self.y) != len(self.X) or len(self.columns) != self.X.shape[1]:
            raise DataError("shape mismatch between X, y and columns")
        self.protected = tuple(sorted(int(i) for i in self.protected))

    def __len__(self) -> int:
        return self.X.shape[0]

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    @property
    def nonprotected(self) -> np.ndarray:
        mask = np.ones(self.n_features, dtype=bool)
        mask[list(self.protected)] = False
        return np.flatnonzero(mask)

    @property
    def X_star(self) -> np.ndarray:
        """Non-protected attributes only."""
        return self.X[:, self.nonprotected]

    def subset(self, rows: Sequence[int] | np.ndarray) -> "DataTable":
        rows = np.asarray(rows)
        return replace(
            self,
            X=self.X[rows],
            y=self.y[rows],
            row_ids=self.row_ids[rows],
            group=None if self.group is None else self.group[rows],
            query=None if self.query is None else self.query[rows],
            n_dropped=0,
        )

    def with_matrix(self, X: np.ndarray, columns: Sequence[str] | None = None) -> "DataTable":
        """Same rows, different representation; protected bookkeeping is reset
        unless the width is unchanged."""
        X = np.asarray(X, dtype=float)
        if columns is None:
            columns = self.columns if X.shape[1] == self.n_features else tuple(
                f"z{k}" for k in range(X.shape[1]))
        keep = X.shape[1] == self.n_features
        return replace(
            self,
            X=X,
            columns=tuple(columns),
            protected=self.protected if keep else (),
            encoding=self.encoding if keep else {},
            categories=self.categories if keep else {},
            scale=None,
        )

    def decode(self, raw_column: str) -> np.ndarray:
        """Recover categorical labels from the one-hot block of ``raw_column``."""
        names = self.encoding[raw_column]
        labels = self.categories[raw_column]
        idx = [self.columns.index(n) for n in names]
        return np.asarray(labels, dtype=object)[np.argmax(self.X[:, idx], axis=1)]


@dataclass(frozen=True)
class SplitSpec:
    seed: int = 0
    fractions: tuple[float, float, float] = (1 / 3, 1 / 3, 1 / 3)
    by_query: bool = False

    def __post_init__(self):
        if len(self.fractions) != 3 or any(f <= 0 for f in self.fractions):
            raise ValueError("split fractions must be three positive numbers")
        if abs(sum(self.fractions) - 1.0) > 1e-9:
            raise ValueError("split fractions must sum to 1")


def load_config(path: str | Path) -> tuple[FeatureSchema, Path]:
    """Read a dataset config; returns the schema and the resolved CSV path."""
    path = Path(path)
    cfg = json.loads(path.read_text(encoding="utf-8"))
    if "csv" not in cfg:
        raise SchemaError("dataset config lacks a 'csv' entry")
    return FeatureSchema.from_dict(cfg), (path.parent / cfg["csv"]).resolve()


def load_dataset(config_path: str | Path) -> DataTable:
    schema, csv_path = load_config(config_path)
    return load_csv(csv_path, schema)


def load_csv(path: str | Path, schema: FeatureSchema) -> DataTable:
    """Load ``path`` and encode it according to ``schema``.

    Categorical columns are one-hot unfolded (``name=value``), string binary
    columns become a single 0/1 column, missing feature cells are imputed with
    the column mean and rows without a usable outcome are dropped.
    """
    df = pd.read_csv(path, encoding="utf-8", skipinitialspace=True)
    required = [c.name for c in schema.columns] + list(schema.score_columns)
    if not schema.score_columns:
        required.append(schema.outcome)
    if schema.query:
        required.append(schema.query)
    missing = [c for c in required if c not in df.columns]
    if missing:
        raise SchemaError(f"columns missing from {path}: {missing}")

    y = _outcome(df, schema)
    keep = np.isfinite(y)
    n_dropped = int((~keep).sum())
    if n_dropped:
        logger.info("dropped %d rows with missing outcome", n_dropped)
    df = df.loc[keep].reset_index(drop=True)
    y = y[keep]
    if len(df) == 0:
        raise DataError(f"{path}: no rows left after cleaning")

    blocks, columns, protected = [], [], []
    encoding, categories = {}, {}
    for spec in schema.columns:
        block, names, cats = _encode_column(df[spec.name], spec)
        start = len(columns)
        blocks.append(block)
        columns.extend(names)
        encoding[spec.name] = tuple(names)
        if cats is not None:
            categories[spec.name] = tuple(cats)
        if spec.protected:
            protected.extend(range(start, start + len(names)))
    X = np.column_stack(blocks) if blocks else np.empty((len(df), 0))

    group = None
    if schema.group is not None:
        if schema.group.column not in df.columns:
            raise SchemaError(f"group column {schema.group.column!r} not in CSV")
        group = schema.group.evaluate(df[schema.group.column])
    query = df[schema.query].to_numpy() if schema.query else None
    return DataTable(
        X=X,
        y=y,
        columns=tuple(columns),
        protected=tuple(protected),
        row_ids=np.flatnonzero(keep),
        group=group,
        query=query,
        task=schema.task,
        encoding=encoding,
        categories=categories,
        n_dropped=n_dropped,
    )


def _outcome(df: pd.DataFrame, schema: FeatureSchema) -> np.ndarray:
    if schema.score_columns:
        from .downstream import score_xing_style

        feats = np.column_stack(
            [pd.to_numeric(df[c], errors="coerce").to_numpy(float) for c in schema.score_columns])
        return score_xing_style(feats, schema.score_weights)
    raw = df[schema.outcome]
    if schema.outcome_positive is not None:
        y = (raw == schema.outcome_positive).to_numpy(float)
        y[raw.isna().to_numpy()] = np.nan
        return y
    return pd.to_numeric(raw, errors="coerce").to_numpy(float)


def _encode_column(col: pd.Series, spec: ColumnSpec):
    if spec.kind == "numeric":
        values = pd.to_numeric(col, errors="coerce")
        bad = col.notna() & values.isna()
        if bad.any():
            raise SchemaError(f"column {spec.name!r}: non-numeric cells, e.g. {col[bad].iloc[0]!r}")
        return _impute(values.to_numpy(float), spec.name)[:, None], [spec.name], None

    if spec.kind == "binary":
        if spec.positive is not None:
            values = (col == spec.positive).astype(float).to_numpy()
        else:
            values = pd.to_numeric(col, errors="coerce").to_numpy(float)
            if np.any(np.isnan(values) & col.notna().to_numpy()):
                raise SchemaError(f"binary column {spec.name!r} needs a 'positive' value")
        values[col.isna().to_numpy()] = np.nan
        return _impute(values, spec.name)[:, None], [spec.name], None

    present = col.dropna()
    cats = sorted(present.astype(str).unique())
    labels = col.astype(str).where(col.notna(), None)
    block = np.zeros((len(col), len(cats)))
    index = {c: k for k, c in enumerate(cats)}
    na_rows = []
    for i, v in enumerate(labels):
        if v is None:
            na_rows.append(i)
        else:
            block[i, index[v]] = 1.0
    if na_rows:
        # category frequencies: the imputed row still sums to one
        freq = block.sum(axis=0) / (len(col) - len(na_rows))
        block[na_rows] = freq
        logger.info("column %s: imputed %d missing categories", spec.name, len(na_rows))
    return block, [f"{spec.name}={c}" for c in cats], cats


def _impute(values: np.ndarray, name: str) -> np.ndarray:
    nan = np.isnan(values)
    if nan.any():
        fill = float(np.nanmean(values)) if (~nan).any() else 0.0
        values = values.copy()
        values[nan] = fill
        logger.info("column %s: imputed %d missing values with mean %.6g", name, nan.sum(), fill)
    return values


def column_scale(X: np.ndarray) -> np.ndarray:
    """Per-column sample standard deviation (n-1); 1.0 for constant columns."""
    X = np.asarray(X, dtype=float)
    if len(X) < 2:
        return np.ones(X.shape[1])
    std = X.std(axis=0, ddof=1)
    return np.where(std > 0, std, 1.0)


def normalize_unit_variance(table: DataTable, scale: np.ndarray | None = None) -> DataTable:
    """Divide every column by its standard deviation; no centering.

    Pass ``scale`` (e.g. from the training split) to apply fixed statistics.
    """
    if len(table) == 0:
        raise DataError("cannot normalize an empty table")
    scale = column_scale(table.X) if scale is None else np.asarray(scale, dtype=float)
    return replace(table, X=table.X / scale, scale=scale)


def split(table: DataTable, spec: SplitSpec = SplitSpec()) -> tuple[DataTable, DataTable, DataTable]:
    """Seeded random train / validation / test partition."""
    rng = np.random.default_rng(spec.seed)
    if spec.by_query and table.query is not None:
        keys = np.unique(table.query)
        counts = _split_counts(len(keys), spec.fractions)
        order = keys[rng.permutation(len(keys))]
        bounds = np.cumsum(counts)[:-1]
        parts = [np.flatnonzero(np.isin(table.query, ks)) for ks in np.split(order, bounds)]
    else:
        counts = _split_counts(len(table), spec.fractions)
        order = rng.permutation(len(table))
        parts = [np.sort(p) for p in np.split(order, np.cumsum(counts)[:-1])]
    return tuple(table.subset(p) for p in parts)


def _split_counts(n: int, fractions) -> list[int]:
    n1 = int(math.floor(fractions[0] * n + 0.5))
    n2 = int(math.floor(fractions[1] * n + 0.5))
    counts = [n1, n2, n - n1 - n2]
    if min(counts) <= 0:
        raise ValueError(f"split of {n} units with fractions {fractions} leaves a part empty")
    return counts


def mask_protected(table: DataTable) -> DataTable:
    """Drop all protected columns (the "masked data" baseline)."""
    if not table.protected:
        return table
    keep = table.nonprotected
    kept = {table.columns[i] for i in keep}
    return replace(
        table,
        X=table.X[:, keep],
        columns=tuple(table.columns[i] for i in keep),
        protected=(),
        encoding={k: v for k, v in table.encoding.items() if set(v) <= kept},
        categories={k: v for k, v in table.categories.items()
                    if set(table.encoding.get(k, ())) <= kept},
        scale=None if table.scale is None else table.scale[keep],
    )


def prepare(table: DataTable, spec: SplitSpec = SplitSpec(), full_table_stats: bool = False):
    """Split then normalize; statistics come from the training split unless
    ``full_table_stats`` is set."""
    train, val, test = split(table, spec)
    scale = column_scale(table.X if full_table_stats else train.X)
    return tuple(normalize_unit_variance(t, scale) for t in (train, val, test))
