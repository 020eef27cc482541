"""Grid search over representation methods, model selection on validation
metrics, the adversarial obfuscation probe and report writing."""
from __future__ import annotations

import csv
import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from itertools import product
from pathlib import Path
from typing import Sequence

import numpy as np

from .baselines import svd_reduce
from .core import HyperParams, transform
from .data import DataTable, SplitSpec, load_dataset, mask_protected, prepare, split
from .downstream import predict, train_logistic, train_ranker
from .lbfgs import OptimizerSettings
from .metrics import (CLASSIFICATION_COLUMNS, RANKING_COLUMNS, MetricReport, PredictionSet,
                      classification_report, ranking_report)
from .optim import fit

logger = logging.getLogger(__name__)

METHODS = ("full", "masked", "svd", "svd-masked", "ifair-a", "ifair-b")
CRITERIA = ("utility", "fairness", "harmonic", "pareto")
DEFAULT_WEIGHTS = (0.0, 0.05, 0.1, 1.0, 10.0, 100.0)
DEFAULT_K = (10, 20, 30)
THREADS_ENV = "IFAIR_THREADS"


@dataclass(frozen=True)
class GridSpec:
    lams: tuple[float, ...] = DEFAULT_WEIGHTS
    mus: tuple[float, ...] = DEFAULT_WEIGHTS
    Ks: tuple[int, ...] = DEFAULT_K
    restarts: int = 3
    criterion: str = "harmonic"
    # sweep lambda with mu fixed (and vice versa) instead of the full product
    one_at_a_time: bool = False
    fixed_weight: float = 1.0
    optimizer: OptimizerSettings = OptimizerSettings()

    def __post_init__(self):
        if not (self.lams and self.mus and self.Ks):
            raise ValueError("grid sets must be non-empty")
        if self.criterion not in CRITERIA:
            raise ValueError(f"unknown criterion {self.criterion!r}")
        if self.restarts < 1:
            raise ValueError("restarts must be at least 1")

    def cells(self, method: str) -> list[dict]:
        """Hyperparameter combinations for a method, in canonical order."""
        if method in ("full", "masked"):
            return [{}]
        if method in ("svd", "svd-masked"):
            return [{"K": int(k)} for k in self.Ks]
        if self.one_at_a_time:
            pairs = [(lam, self.fixed_weight) for lam in self.lams]
            pairs += [(self.fixed_weight, mu) for mu in self.mus if (self.fixed_weight, mu) not in pairs]
        else:
            pairs = list(product(self.lams, self.mus))
        return [{"lam": float(lam), "mu": float(mu), "K": int(k)} for (lam, mu), k in product(pairs, self.Ks)]


@dataclass
class Dataset:
    name: str
    train: DataTable
    val: DataTable
    test: DataTable

    @property
    def task(self) -> str:
        return self.train.task


@dataclass
class ExperimentRecord:
    dataset: str
    method: str
    cell: int
    params: dict
    seed: int
    validation: MetricReport | None = None
    test: MetricReport | None = None
    wall_time: float = 0.0
    status: str = "ok"
    diagnostics: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    def to_dict(self, timing: bool = False) -> dict:
        d = {
            "dataset": self.dataset, "method": self.method, "cell": self.cell, "params": self.params,
            "seed": self.seed, "status": self.status, "diagnostics": self.diagnostics,
            "validation": None if self.validation is None else self.validation.values,
            "test": None if self.test is None else self.test.values,
        }
        if timing:
            d["wall_time"] = self.wall_time
        return d

    @classmethod
    def from_dict(cls, d: dict, task: str = "classification") -> "ExperimentRecord":
        rep = lambda v: None if v is None else MetricReport(task, dict(v))  # noqa: E731
        return cls(d["dataset"], d["method"], d["cell"], d["params"], d["seed"],
                   rep(d.get("validation")), rep(d.get("test")), d.get("wall_time", 0.0),
                   d.get("status", "ok"), d.get("diagnostics", []))


def cell_seed(master: int, cell: int) -> int:
    """Seed for one grid cell, independent of execution order."""
    return int(np.random.SeedSequence([master, cell]).generate_state(1)[0])


def thread_count() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def load(config_path: str | Path, split_seed: int = 0, full_table_stats: bool = False) -> Dataset:
    """Load, encode, split and normalize a dataset described by a config."""
    table = load_dataset(config_path)
    parts = prepare(table, SplitSpec(seed=split_seed, by_query=table.query is not None),
                    full_table_stats)
    return Dataset(Path(config_path).stem, *parts)


# ------------------------------------------------------------ representations


def represent(dataset: Dataset, method: str, params: dict, seed: int, restarts: int = 3,
              optimizer: OptimizerSettings = OptimizerSettings()):
    """Fit a representation on the training split and apply it to all three.

    Returns the three matrices and the fitted object (model or None).
    """
    tables = (dataset.train, dataset.val, dataset.test)
    if method == "full":
        return [t.X for t in tables], None
    if method == "masked":
        return [mask_protected(t).X for t in tables], None
    if method in ("svd", "svd-masked"):
        src = [mask_protected(t) for t in tables] if method == "svd-masked" else list(tables)
        rep = svd_reduce(src[0], params["K"])
        return [rep.project(t.X) for t in src], rep
    if method in ("ifair-a", "ifair-b"):
        hp = HyperParams(lam=params["lam"], mu=params["mu"], K=params["K"], init=method,
                         restarts=restarts, seed=seed, optimizer=optimizer)
        result = fit(dataset.train, hp)
        return [transform(t.X, result.model) for t in tables], result
    raise ValueError(f"unknown method {method!r}")


def evaluate(dataset: Dataset, Z: Sequence[np.ndarray], k: int = 10) -> tuple[MetricReport, MetricReport]:
    """Train the downstream model on the training representation and report
    validation and test metrics."""
    tr, va, te = dataset.train, dataset.val, dataset.test
    if dataset.task == "classification":
        model = train_logistic(Z[0], tr.y)
        reps = []
        for t, z in ((va, Z[1]), (te, Z[2])):
            preds = PredictionSet(predict(model, z), t.y, t.group, t.X_star)
            reps.append(classification_report(preds, k))
        return tuple(reps)
    model = train_ranker(Z[0], tr.y)
    return tuple(ranking_report(predict(model, z), t.y, t.query, t.group, t.X_star, k)
                 for t, z in ((va, Z[1]), (te, Z[2])))


def run_cell(dataset: Dataset, method: str, cell: int, params: dict, master_seed: int,
             restarts: int = 3, optimizer: OptimizerSettings = OptimizerSettings()) -> ExperimentRecord:
    seed = cell_seed(master_seed, cell)
    rec = ExperimentRecord(dataset.name, method, cell, dict(params), seed)
    start = time.perf_counter()
    try:
        Z, fitted = represent(dataset, method, params, seed, restarts, optimizer)
        rec.validation, rec.test = evaluate(dataset, Z)
        if hasattr(fitted, "loss"):
            rec.diagnostics = [f"loss={fitted.loss!r}", f"iterations={fitted.n_iter}"]
    except Exception as exc:  # quarantined into the report
        logger.warning("cell %d (%s %s) failed: %s", cell, method, params, exc)
        rec.status = f"failed: {type(exc).__name__}: {exc}"
    rec.wall_time = time.perf_counter() - start
    return rec


def _run_cell_args(args):
    return run_cell(*args)


def run_grid(dataset: Dataset, method: str, grid: GridSpec = GridSpec(), master_seed: int = 0,
             workers: int | None = None) -> list[ExperimentRecord]:
    """One record per cell, in cell order whatever the number of workers."""
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}")
    jobs = [(dataset, method, i, params, master_seed, grid.restarts, grid.optimizer)
            for i, params in enumerate(grid.cells(method))]
    workers = thread_count() if workers is None else workers
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(_run_cell_args, jobs))
    else:
        records = [_run_cell_args(j) for j in jobs]
    return sorted(records, key=lambda r: r.cell)


# ------------------------------------------------------------ selection


def _utility(rep: MetricReport) -> float:
    return rep["AUC"] if rep.task == "classification" else rep["MAP"]


def _scores(rec: ExperimentRecord):
    u, f = _utility(rec.validation), rec.validation["yNN"]
    return (float("nan") if u is None else u, float("nan") if f is None else f)


def harmonic_mean(a: float, b: float) -> float:
    return 0.0 if a + b == 0 else 2 * a * b / (a + b)


def pareto_front(points: Sequence[tuple[float, float]]) -> list[int]:
    """Indices of points not dominated (>= in both, > in one) by any other."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    if len(pts) == 0:
        return []
    ge = np.all(pts[None, :, :] >= pts[:, None, :], axis=2)
    gt = np.any(pts[None, :, :] > pts[:, None, :], axis=2)
    dominated = np.any(ge & gt, axis=1)
    return [int(i) for i in np.flatnonzero(~dominated)]


def select(records: Sequence[ExperimentRecord], criterion: str = "harmonic") -> list[ExperimentRecord]:
    """Choose among records using validation metrics only.

    Utility is validation AUC (MAP for ranking tasks), fairness is validation
    yNN. Ties go to the earliest cell. ``pareto`` returns the whole front.
    """
    if criterion not in CRITERIA:
        raise ValueError(f"unknown criterion {criterion!r}")
    usable = [r for r in records if r.ok and r.validation is not None]
    usable = [r for r in usable if not any(np.isnan(_scores(r)))]
    if not usable:
        return []
    pts = [_scores(r) for r in usable]
    if criterion == "pareto":
        return [usable[i] for i in pareto_front(pts)]
    key = {"utility": lambda p: p[0], "fairness": lambda p: p[1],
           "harmonic": lambda p: harmonic_mean(*p)}[criterion]
    vals = [key(p) for p in pts]
    return [usable[int(np.argmax(vals))]]


# ------------------------------------------------------------ obfuscation


def obfuscation_probe(Z, labels, spec: SplitSpec = SplitSpec()) -> float | None:
    """Test accuracy of a logistic model predicting protected-group membership
    from a representation, trained on the training third."""
    Z = np.asarray(Z, dtype=float)
    labels = np.asarray(labels, dtype=float)
    table = DataTable(X=Z, y=labels, columns=tuple(f"z{i}" for i in range(Z.shape[1])))
    train, _, test = split(table, spec)
    return probe_accuracy(train.X, train.y, test.X, test.y)


def probe_accuracy(Z_train, g_train, Z_test, g_test) -> float | None:
    """Accuracy on the test rows of a logistic adversary trained to predict
    group membership on the training rows; None with a single training group."""
    g_train = np.asarray(g_train, dtype=float)
    if g_train.min() == g_train.max():
        return None
    model = train_logistic(np.asarray(Z_train, dtype=float), g_train)
    return float(np.mean((predict(model, Z_test) >= 0.5) == np.asarray(g_test, dtype=float)))


def dataset_probe(dataset: Dataset, method: str, params: dict, seed: int, restarts: int = 3,
                  optimizer: OptimizerSettings = OptimizerSettings()) -> dict:
    """Obfuscation probe on the dataset's own split: the representation is fit
    on the training split, the adversary is trained on the training rows and
    scored on the test rows.  Reports the majority rate of the test rows too."""
    Z, _ = represent(dataset, method, params, seed, restarts, optimizer)
    g_test = dataset.test.group.astype(float)
    return {"accuracy": probe_accuracy(Z[0], dataset.train.group, Z[2], g_test),
            "base_rate": float(max(g_test.mean(), 1 - g_test.mean()))}


# ------------------------------------------------------------ reporting


def metric_columns(task: str) -> tuple[str, ...]:
    return CLASSIFICATION_COLUMNS if task == "classification" else RANKING_COLUMNS


def _fmt(v) -> str:
    return "" if v is None else repr(float(v))


def emit_report(records: Sequence[ExperimentRecord], out: str | Path, stem: str = "report",
                timing: bool = False) -> list[Path]:
    """Write ``<stem>.csv`` (one row per record) and ``<stem>.json``.

    Wall time is left out unless ``timing`` is set, so reruns with the same
    seed produce byte-identical files.
    """
    if not records:
        raise ValueError("no records to report")
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    task = next((r.validation.task for r in records if r.validation is not None), "classification")
    cols = metric_columns(task)
    keys = ("lam", "mu", "K")
    csv_path, json_path = out / f"{stem}.csv", out / f"{stem}.json"
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        header = ["dataset", "method", "cell", *keys, "seed", "status"]
        header += [f"val_{c}" for c in cols] + [f"test_{c}" for c in cols]
        if timing:
            header.append("wall_time")
        w.writerow(header)
        for r in records:
            row = [r.dataset, r.method, r.cell, *(r.params.get(k, "") for k in keys), r.seed, r.status]
            for rep in (r.validation, r.test):
                row += [_fmt(rep.get(c) if rep is not None else None) for c in cols]
            if timing:
                row.append(f"{r.wall_time:.3f}")
            w.writerow(row)
    payload = {"task": task, "columns": list(cols), "records": [r.to_dict(timing) for r in records]}
    json_path.write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return [csv_path, json_path]


def load_records(path: str | Path) -> list[ExperimentRecord]:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    return [ExperimentRecord.from_dict(d, payload.get("task", "classification")) for d in payload["records"]]
