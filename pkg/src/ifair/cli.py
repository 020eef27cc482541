"""Command line entry points."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np
import pandas as pd

from . import baselines, experiment, synthetic
from .core import HyperParams, IFairModel, transform
from .data import SplitSpec, load_dataset, prepare
from .lbfgs import OptimizerSettings
from .optim import fit

logger = logging.getLogger("ifair")


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.split(",") if v.strip())


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.split(",") if v.strip())


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_table(path: Path, table, X=None) -> None:
    X = table.X if X is None else X
    cols = table.columns if X.shape[1] == table.n_features else [f"z{i}" for i in range(X.shape[1])]
    df = pd.DataFrame(X, columns=list(cols))
    df.insert(0, "row_id", table.row_ids)
    df["outcome"] = table.y
    if table.group is not None:
        df["protected_group"] = table.group.astype(int)
    if table.query is not None:
        df["query"] = table.query
    df.to_csv(path, index=False, float_format="%.17g", lineterminator="\n")


def _grid(args) -> experiment.GridSpec:
    return experiment.GridSpec(
        lams=args.lams, mus=args.mus, Ks=args.ks, restarts=args.restarts, criterion=args.criterion,
        one_at_a_time=args.one_at_a_time, optimizer=OptimizerSettings(max_iter=args.max_iter))


def _params(args) -> dict:
    if args.method in ("full", "masked"):
        return {}
    if args.method in ("svd", "svd-masked"):
        return {"K": args.k}
    return {"lam": args.lam, "mu": args.mu, "K": args.k}


# ------------------------------------------------------------ commands


def cmd_prep(args) -> int:
    table = load_dataset(args.config)
    parts = prepare(table, SplitSpec(seed=args.split_seed, by_query=table.query is not None),
                    args.full_table_stats)
    out = _out(args)
    for name, part in zip(("train", "val", "test"), parts):
        _write_table(out / f"{name}.csv", part)
    meta = {"rows": len(table), "dropped": table.n_dropped, "columns": list(table.columns),
            "protected": [table.columns[i] for i in table.protected],
            "scale": parts[0].scale.tolist(), "sizes": [len(p) for p in parts]}
    (out / "prep.json").write_text(json.dumps(meta, indent=1) + "\n", encoding="utf-8")
    print(f"{len(table)} rows, {table.n_features} encoded columns, splits {meta['sizes']}")
    return 0


def cmd_fit(args) -> int:
    ds = experiment.load(args.config, args.split_seed, args.full_table_stats)
    init = args.method if args.method in ("ifair-a", "ifair-b") else "ifair-b"
    hp = HyperParams(lam=args.lam, mu=args.mu, K=args.k, p=args.p, init=init, restarts=args.restarts,
                     seed=args.seed, optimizer=OptimizerSettings(max_iter=args.max_iter))
    result = fit(ds.train, hp)
    out = _out(args)
    result.model.save(out / "model.json")
    result.write_trace(out / "trace.csv")
    print(f"loss {result.loss:.6g} after {result.n_iter} iterations, restarts {result.seeds}")
    return 0


def cmd_transform(args) -> int:
    model = IFairModel.load(args.model)
    ds = experiment.load(args.config, args.split_seed, args.full_table_stats)
    out = _out(args)
    for name, part in (("train", ds.train), ("val", ds.val), ("test", ds.test)):
        _write_table(out / f"{name}_transformed.csv", part, transform(part.X, model))
    print(f"wrote transformed splits to {out}")
    return 0


def cmd_grid(args) -> int:
    ds = experiment.load(args.config, args.split_seed, args.full_table_stats)
    grid = _grid(args)
    records = experiment.run_grid(ds, args.method, grid, args.seed)
    out = _out(args)
    experiment.emit_report(records, out, f"grid_{args.method}")
    chosen = experiment.select(records, grid.criterion)
    if chosen:
        experiment.emit_report(chosen, out, f"selected_{args.method}_{grid.criterion}")
    failed = sum(not r.ok for r in records)
    print(f"{len(records)} cells, {failed} failed, {len(chosen)} selected by {grid.criterion}")
    return 0


def cmd_eval(args) -> int:
    ds = experiment.load(args.config, args.split_seed, args.full_table_stats)
    rec = experiment.run_cell(ds, args.method, 0, _params(args), args.seed, args.restarts,
                              OptimizerSettings(max_iter=args.max_iter))
    experiment.emit_report([rec], _out(args), f"eval_{args.method}")
    if not rec.ok:
        print(rec.status, file=sys.stderr)
        return 1
    print(json.dumps({"validation": rec.validation.values, "test": rec.test.values}))
    return 0


def cmd_rerank(args) -> int:
    lists = baselines.read_ranked_lists(args.input)
    ranked = baselines.rerank_queries(lists, args.proportion, args.alpha, strict=args.strict)
    out = _out(args)
    baselines.write_ranked_lists(ranked, out / "reranked.csv")
    share = np.mean([r.protected_share_top(10) for r in ranked]) if ranked else 0.0
    print(f"{len(ranked)} lists re-ranked, protected share in top 10: {100 * share:.2f}%")
    return 0


def cmd_synth(args) -> int:
    cfg = synthetic.SynthConfig(n=args.n, seed=args.seed)
    hp = HyperParams(lam=args.lam, mu=args.mu, K=args.k, init="ifair-b", restarts=args.restarts,
                     seed=args.seed, optimizer=OptimizerSettings(max_iter=args.max_iter))
    report, models, tables = synthetic.run_study(cfg, hp)
    out = _out(args)
    synthetic.write_points(out / "synthetic_points.csv", tables, models)
    (out / "synthetic_report.json").write_text(json.dumps(asdict(report), indent=1, sort_keys=True) + "\n",
                                              encoding="utf-8")
    print(f"displacement {report.displacement:.4f} (SVD {report.svd_displacement:.4f})")
    return 0


def cmd_probe(args) -> int:
    ds = experiment.load(args.config, args.split_seed, args.full_table_stats)
    opt = OptimizerSettings(max_iter=args.max_iter)
    result = {}
    for method in dict.fromkeys((args.method, "masked")):
        params = _params(args) if method == args.method else {}
        res = experiment.dataset_probe(ds, method, params, args.seed, args.restarts, opt)
        result[method] = res["accuracy"]
    result["base_rate"] = res["base_rate"]
    out = _out(args)
    (out / f"probe_{args.method}.json").write_text(json.dumps(result, indent=1) + "\n", encoding="utf-8")
    print(json.dumps(result))
    return 0


def cmd_report(args) -> int:
    records = [r for path in args.inputs for r in experiment.load_records(path)]
    out = _out(args)
    experiment.emit_report(records, out, "report")
    chosen = experiment.select(records, args.criterion)
    if chosen:
        experiment.emit_report(chosen, out, f"selected_{args.criterion}")
    print(f"{len(records)} records, {len(chosen)} selected by {args.criterion}")
    return 0


# ------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="dataset config (JSON)")
    common.add_argument("--seed", type=int, default=0, help="master seed")
    common.add_argument("--split-seed", type=int, default=0)
    common.add_argument("--full-table-stats", action="store_true",
                        help="normalize with statistics of the whole table instead of the training split")
    common.add_argument("--method", choices=experiment.METHODS, default="ifair-b")
    common.add_argument("--criterion", choices=experiment.CRITERIA, default="harmonic")
    common.add_argument("--out", default="out")
    common.add_argument("--lam", type=float, help="utility weight (default 1; 100 for synth)")
    common.add_argument("--mu", type=float, help="fairness weight (default 1; 0.1 for synth)")
    common.add_argument("--k", type=int, help="prototypes or SVD rank (default 10; 2 for synth)")
    common.add_argument("--p", type=float, default=2.0, help="Minkowski exponent")
    common.add_argument("--restarts", type=int, default=3)
    common.add_argument("--max-iter", type=int, default=500)
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="ifair", description="Individually fair representations.")
    sub = parser.add_subparsers(dest="command", required=True)
    commands = {
        "prep": (cmd_prep, "load, encode, split and normalize a dataset"),
        "fit": (cmd_fit, "train a prototype model on the training split"),
        "transform": (cmd_transform, "apply a saved model to every split"),
        "grid": (cmd_grid, "hyperparameter grid search with model selection"),
        "eval": (cmd_eval, "evaluate one representation method"),
        "rerank": (cmd_rerank, "group-fair re-ranking of ranked lists"),
        "synth": (cmd_synth, "synthetic mixture study"),
        "probe": (cmd_probe, "adversarial prediction of the protected group"),
        "report": (cmd_report, "merge record files and select models"),
    }
    for name, (func, help_text) in commands.items():
        p = sub.add_parser(name, parents=[common], help=help_text)
        p.set_defaults(func=func)
        if name == "grid":
            p.add_argument("--lams", type=_floats, default=experiment.DEFAULT_WEIGHTS)
            p.add_argument("--mus", type=_floats, default=experiment.DEFAULT_WEIGHTS)
            p.add_argument("--ks", type=_ints, default=experiment.DEFAULT_K)
            p.add_argument("--one-at-a-time", action="store_true",
                           help="sweep lambda and mu separately instead of jointly")
        if name == "transform":
            p.add_argument("--model", required=True)
        if name == "rerank":
            p.add_argument("--input", required=True, help="ranked lists CSV")
            p.add_argument("--proportion", type=float, default=0.5,
                           help="target protected proportion for the binomial test")
            p.add_argument("--alpha", type=float, default=baselines.DEFAULT_ALPHA)
            p.add_argument("--strict", action="store_true", help="fail on infeasible prefixes")
        if name == "synth":
            p.add_argument("--n", type=int, default=100)
        if name == "report":
            p.add_argument("inputs", nargs="+", help="record JSON files")
    return parser


_DEFAULTS = {"lam": 1.0, "mu": 1.0, "k": 10}
_SYNTH_DEFAULTS = {"lam": synthetic.STUDY_LAM, "mu": synthetic.STUDY_MU, "k": 2}
_NEEDS_CONFIG = {"prep", "fit", "transform", "grid", "eval", "probe"}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command in _NEEDS_CONFIG and not args.config:
        parser.error(f"{args.command} requires --config")
    defaults = _SYNTH_DEFAULTS if args.command == "synth" else _DEFAULTS
    for key, value in defaults.items():
        if getattr(args, key) is None:
            setattr(args, key, value)
    try:
        return args.func(args)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
