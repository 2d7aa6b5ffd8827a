"""Command-line front end.

    cct run CONFIG [--set section.field=value ...]
    cct sweep CONFIG --axis shots --values 1,3,5 --seeds 0,1,2 [--jobs N]
    cct ablate CONFIG --seeds 0,1,2,3,4 [--rows abcdef]
    cct export-embeddings CHECKPOINT DATA.csv OUT.csv [--network s|t]
    cct defaults
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import evalkit, netpair, pipeline
from .config import ConfigError, ExperimentConfig, load_config
from .synthdomain import LabelSetConfig, read_matrix_csv, write_matrix_csv
from .trainer import RECORD_COLUMNS

log = logging.getLogger("cct")

SWEEP_AXES = ("shots", "lambda1", "lambda2", "private_size", "common_size")


class CellError(RuntimeError):
    pass


# -- run -------------------------------------------------------------------------
def format_value(v):
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    return "nan" if math.isnan(v) else repr(v)


def write_metrics(path, record):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RECORD_COLUMNS)
        for row in record.rows:
            w.writerow([format_value(row[c]) for c in RECORD_COLUMNS])


def write_outputs(result, out_dir, wall_time):
    """Persist metrics, summary, checkpoint and dataset dumps of one run."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg = result.config
    lc = result.pair.label_config
    metrics = out / "metrics.csv"
    write_metrics(metrics, result.record)
    meta = {"label_config": _label_dict(lc), "config": cfg.to_dict()}
    ckpt = netpair.save_checkpoint(out / "checkpoint.json", result.dual, meta)
    data_dir = out / "data"
    data_dir.mkdir(exist_ok=True)
    pair = result.pair
    write_matrix_csv(data_dir / "source.csv", pair.source_x, pair.source_y)
    write_matrix_csv(data_dir / "target_labeled.csv", pair.target_labeled_x, pair.target_labeled_y)
    write_matrix_csv(data_dir / "target_unlabeled.csv", pair.target_unlabeled_x, np.full(len(pair.target_unlabeled_x), -1))
    write_matrix_csv(data_dir / "target_eval.csv", pair.target_unlabeled_x, pair.target_unlabeled_y)
    summary = {
        "final_model": "theta_s",
        "theta_s": result.final_s.to_dict(),
        "theta_t": result.final_t.to_dict(),
        "pre_adaptation": {"theta_s": result.initial_s.to_dict(), "theta_t": result.initial_t.to_dict()},
        "config": cfg.to_dict(),
        "wall_time_s": wall_time,
    }
    summary_path = out / "summary.json"
    summary_path.write_text(json.dumps(summary, indent=2, sort_keys=True))
    config_path = out / "resolved_config.json"
    config_path.write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True))
    return {"metrics": metrics, "summary": summary_path, "checkpoints": [ckpt], "config": config_path}


def _label_dict(lc):
    return {"total_classes": lc.total_classes, "source_count": lc.source_count, "target_count": lc.target_count}


def run(cfg, out_dir=None):
    start = time.perf_counter()
    result = pipeline.run_experiment(cfg)
    return result, write_outputs(result, out_dir or cfg.output_dir, time.perf_counter() - start)


# -- sweeps ----------------------------------------------------------------------
def apply_axis(cfg, axis, value):
    """Config for one sweep cell."""
    ds, losses = cfg.dataset, cfg.losses
    if axis == "shots":
        return replace(cfg, dataset=replace(ds, shots=int(value)))
    if axis == "lambda1":
        return replace(cfg, losses=replace(losses, lambda1=float(value)))
    if axis == "lambda2":
        return replace(cfg, losses=replace(losses, lambda2=float(value)))
    total = ds.total_classes
    common = len(ds.label_config().common_classes)
    if axis == "private_size":
        # union size and commonness held fixed; the source-private set absorbs the change
        priv = int(value)
        if common + priv > total:
            raise ValueError(f"private_size {priv} too large for {total} classes with {common} common")
        return replace(cfg, dataset=replace(ds, source_count=total - priv, target_count=common + priv))
    if axis == "common_size":
        # union size fixed, equal private sets on both sides
        c = int(value)
        if (total - c) % 2 or not 0 <= c <= total:
            raise ValueError(f"common_size {c} must leave an even number of private classes out of {total}")
        priv = (total - c) // 2
        return replace(cfg, dataset=replace(ds, source_count=c + priv, target_count=c + priv))
    raise ValueError(f"unknown sweep axis {axis!r}; choose from {SWEEP_AXES}")


def cell_score(report):
    """H-score, or the accuracy of whichever partition exists when the other is empty."""
    if report.h_score is not None:
        return report.h_score
    return report.acc_private if report.acc_private is not None else report.acc_common


def sweep(cfg, axis, values, seeds, jobs=1):
    cells = [(v, s) for v in values for s in seeds]
    configs = {v: apply_axis(cfg, axis, v) for v in values}
    for c in configs.values():
        c.validate()

    def work(cell):
        v, s = cell
        try:
            res = pipeline.run_experiment(replace(configs[v], seed=s))
        except Exception as exc:
            raise CellError(f"sweep cell {axis}={v} seed={s} failed: {exc}") from exc
        return res

    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        results = list(pool.map(work, cells))
    rows = []
    for (v, s), res in zip(cells, results):
        rep = res.final_s
        rows.append({
            "axis": axis, "value": v, "seed": s, "score": cell_score(rep),
            "h_score": rep.h_score, "acc_common": rep.acc_common, "acc_private": rep.acc_private,
            "n_labeled": len(res.pair.target_labeled_y),
        })
    return rows


def aggregate(rows):
    out = []
    for v in dict.fromkeys(r["value"] for r in rows):
        scores = np.array([r["score"] for r in rows if r["value"] == v], dtype=float)
        out.append({"value": v, "n": len(scores), "mean": float(scores.mean()), "std": float(scores.std())})
    return out


def write_sweep(out_dir, axis, rows):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cells = out / f"sweep_{axis}.csv"
    with open(cells, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["axis", "value", "seed", "score", "h_score", "acc_common", "acc_private", "n_labeled"])
        for r in rows:
            w.writerow([axis, r["value"], r["seed"], *(_opt(r[k]) for k in ("score", "h_score", "acc_common", "acc_private")), r["n_labeled"]])
    agg = out / f"sweep_{axis}_summary.csv"
    with open(agg, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["axis", "value", "n", "mean", "std"])
        for r in aggregate(rows):
            w.writerow([axis, r["value"], r["n"], format_value(r["mean"]), format_value(r["std"])])
    return cells, agg


def _opt(v):
    return "nan" if v is None else format_value(v)


# -- embeddings ------------------------------------------------------------------
def export_embeddings(checkpoint, data, out, network="s"):
    """Write backbone features ``id,y,is_common,f0..`` for the rows of a data CSV."""
    net = netpair.load_checkpoint(checkpoint)
    meta = json.loads(Path(checkpoint).read_text()).get("meta", {})
    if isinstance(net, netpair.DualNet):
        net = net.theta_s if network == "s" else net.theta_t
    x, y = read_matrix_csv(data)
    if x.shape[1] != net.arch.input_dim:
        raise ValueError(f"data has {x.shape[1]} feature columns but the checkpoint expects {net.arch.input_dim}")
    feats = netpair.features(net, x).data
    if "label_config" in meta:
        lc = LabelSetConfig(**meta["label_config"])
        flag = np.array([-1 if v < 0 else int(lc.is_common(int(v))) for v in y])
    else:
        flag = np.full(len(y), -1)
    write_matrix_csv(out, feats, y, prefix="f", extra={"is_common": flag})
    return Path(out)


# -- argument parsing --------------------------------------------------------------
def _csv_list(text, kind):
    try:
        return [kind(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def build_parser():
    p = argparse.ArgumentParser(prog="cct", description="Collaborative consistency training on synthetic domains")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(sp):
        sp.add_argument("config", nargs="?", help="JSON config file (omit for defaults)")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config field")
        sp.add_argument("--out", help="output directory (defaults to config output_dir)")

    r = sub.add_parser("run", help="pretrain, adapt and evaluate once")
    with_config(r)

    s = sub.add_parser("sweep", help="run a grid over one axis and several seeds")
    with_config(s)
    s.add_argument("--axis", required=True, choices=SWEEP_AXES)
    s.add_argument("--values", required=True)
    s.add_argument("--seeds", default="0", type=lambda t: _csv_list(t, int))
    s.add_argument("--jobs", type=int, default=1)

    a = sub.add_parser("ablate", help="run the component ablation rows")
    with_config(a)
    a.add_argument("--seeds", default="0,1,2,3,4", type=lambda t: _csv_list(t, int))
    a.add_argument("--rows", default="abcdef")

    e = sub.add_parser("export-embeddings", help="dump backbone features of a checkpoint")
    e.add_argument("checkpoint")
    e.add_argument("data")
    e.add_argument("out")
    e.add_argument("--network", choices=("s", "t"), default="s")

    sub.add_parser("defaults", help="print the fully resolved default config")
    return p


def _load(args):
    cfg = load_config(args.config)
    if args.set:
        cfg = cfg.with_overrides(args.set)
    return cfg


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(message)s")
    try:
        if args.command == "defaults":
            print(json.dumps(ExperimentConfig().to_dict(), indent=2, sort_keys=True))
        elif args.command == "run":
            cfg = _load(args)
            result, paths = run(cfg, args.out)
            rs = result.final_s
            log.info("theta_s H=%s common=%s private=%s", rs.h_score, rs.acc_common, rs.acc_private)
            log.info("wrote %s and %s", paths["metrics"], paths["summary"])
        elif args.command == "sweep":
            cfg = _load(args)
            kind = int if args.axis in ("shots", "private_size", "common_size") else float
            values = _csv_list(args.values, kind)
            rows = sweep(cfg, args.axis, values, args.seeds, args.jobs)
            cells, agg = write_sweep(args.out or cfg.output_dir, args.axis, rows)
            for r in aggregate(rows):
                log.info("%s=%s mean=%.4f std=%.4f", args.axis, r["value"], r["mean"], r["std"])
            log.info("wrote %s and %s", cells, agg)
        elif args.command == "ablate":
            cfg = _load(args)
            rows = evalkit.run_ablation(cfg, evalkit.default_rows(args.rows), args.seeds)
            out = Path(args.out or cfg.output_dir)
            out.mkdir(parents=True, exist_ok=True)
            evalkit.write_ablation_csv(out / "ablation.csv", rows)
            for row in rows:
                log.info("row %s (%s): H=%.4f +- %.4f", row.name, row.flags.label(), row.mean, row.std)
        elif args.command == "export-embeddings":
            export_embeddings(args.checkpoint, args.data, args.out, args.network)
    except (ConfigError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (OSError, CellError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
