"""H-score and common/private accuracy evaluation, plus the ablation runner."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import netpair
from .losses import ABLATION_ROWS, LossFlags


def h_score(a_common, a_private):
    """Harmonic mean of common-class and target-private-class accuracy."""
    for a in (a_common, a_private):
        if not 0.0 <= a <= 1.0:
            raise ValueError(f"accuracy {a!r} outside [0, 1]")
    denom = a_common + a_private
    return 0.0 if denom == 0 else 2.0 * a_common * a_private / denom


@dataclass
class EvalReport:
    """Accuracies over the target label set.

    ``acc_common`` / ``acc_private`` are None when that partition has no
    evaluation samples; ``h_score`` is then None as well.
    """

    acc_common: float | None
    acc_private: float | None
    h_score: float | None
    overall: float
    per_class: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "acc_common": self.acc_common,
            "acc_private": self.acc_private,
            "h_score": self.h_score,
            "overall": self.overall,
            "per_class": {str(k): v for k, v in self.per_class.items()},
        }


def report_from_predictions(pred, truth, label_config):
    """Build an EvalReport from global-id predictions and ground truth."""
    pred = np.asarray(pred, dtype=int)
    truth = np.asarray(truth, dtype=int)
    targets = set(label_config.target_classes)
    if not set(np.unique(truth).tolist()) <= targets:
        raise ValueError("evaluation labels must lie in the target label set")
    correct = pred == truth
    common = np.array([label_config.is_common(int(c)) for c in truth], dtype=bool)
    acc_c = float(correct[common].mean()) if common.any() else None
    acc_p = float(correct[~common].mean()) if (~common).any() else None
    h = None if acc_c is None or acc_p is None else h_score(acc_c, acc_p)
    per_class = {}
    for c in label_config.target_classes:
        sel = truth == c
        if sel.any():
            per_class[c] = float(correct[sel].mean())
    overall = float(correct.mean()) if len(truth) else math.nan
    return EvalReport(acc_c, acc_p, h, overall, per_class)


def predict(params, x, label_config):
    """Argmax predictions as global class ids."""
    local = netpair.predict_proba(params, x).argmax(axis=1)
    return label_config.to_global(local)


def evaluate(params, x, y, label_config):
    return report_from_predictions(predict(params, x, label_config), y, label_config)


def pseudo_label_stats(params, x, truth_local, tau):
    """Coverage and precision of the network's confident predictions on clean inputs."""
    p = netpair.predict_proba(params, x)
    conf = p.max(axis=1) >= tau
    coverage = float(conf.mean())
    precision = float((p.argmax(axis=1)[conf] == np.asarray(truth_local)[conf]).mean()) if conf.any() else 0.0
    return coverage, precision


def checkpoint_metrics(dual, x, y, label_config, tau):
    """Metric columns for one RunRecord row."""
    rs = evaluate(dual.theta_s, x, y, label_config)
    rt = evaluate(dual.theta_t, x, y, label_config)
    cov, prec = pseudo_label_stats(dual.theta_s, x, label_config.to_local(y), tau)

    def num(v):
        return math.nan if v is None else v

    return {
        "h_s": num(rs.h_score), "h_t": num(rt.h_score),
        "acc_common_s": num(rs.acc_common), "acc_private_s": num(rs.acc_private),
        "acc_common_t": num(rt.acc_common), "acc_private_t": num(rt.acc_private),
        "pl_coverage": cov, "pl_precision": prec,
    }


@dataclass
class AblationRow:
    name: str
    flags: LossFlags
    h_scores: list = field(default_factory=list)
    reports: list = field(default_factory=list)

    @property
    def mean(self):
        return float(np.mean(self.h_scores)) if self.h_scores else math.nan

    @property
    def std(self):
        return float(np.std(self.h_scores)) if self.h_scores else math.nan


def default_rows(names="abcdef"):
    return [AblationRow(n, ABLATION_ROWS[n]) for n in names]


def run_ablation(config, rows=None, seeds=(0, 1, 2, 3, 4), runner=None):
    """Run every row for every seed and collect final H-scores of theta_s.

    ``runner(config, flags, seed)`` must return the final EvalReport of the
    source-initialized network; by default the full experiment pipeline is
    used, with pretrained backbones shared between rows of the same seed.
    """
    from . import pipeline

    rows = default_rows() if rows is None else rows
    if not any(not any(r.flags.as_tuple()) for r in rows) or not any(all(r.flags.as_tuple()) for r in rows):
        raise ValueError("an ablation needs a consistency-free row and a row with every term enabled")
    if runner is None:
        cache = {}

        def runner(cfg, flags, seed):
            return pipeline.run_with_flags(cfg, flags, seed, cache).final_s

    for seed in seeds:
        for row in rows:
            report = runner(config, row.flags, seed)
            row.reports.append((seed, report))
            row.h_scores.append(math.nan if report.h_score is None else report.h_score)
    return rows


def write_ablation_csv(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["row", "flags", "seed", "h_score", "acc_common", "acc_private"])
        for row in rows:
            for seed, rep in row.reports:
                w.writerow([row.name, row.flags.label(), seed, _fmt(rep.h_score), _fmt(rep.acc_common), _fmt(rep.acc_private)])


def _fmt(v):
    return "nan" if v is None else repr(float(v))
