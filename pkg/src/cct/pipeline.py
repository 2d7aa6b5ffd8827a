"""End-to-end experiment: generate data, pretrain both backbones, adapt, evaluate."""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from . import evalkit, netpair, trainer
from .synthdomain import generate

log = logging.getLogger(__name__)

# fixed order of streams spawned from the master seed
_STREAMS = ("dataset", "init_s", "init_t", "pretrain_s", "pretrain_t", "train")


def derive_seeds(master):
    """Integer seeds for each stage, split from one master seed."""
    children = np.random.SeedSequence(master).spawn(len(_STREAMS))
    return {name: int(c.generate_state(1, np.uint64)[0]) for name, c in zip(_STREAMS, children)}


@dataclass
class RunResult:
    config: object
    pair: object
    dual: netpair.DualNet
    record: trainer.RunRecord
    initial_s: evalkit.EvalReport
    initial_t: evalkit.EvalReport
    final_s: evalkit.EvalReport
    final_t: evalkit.EvalReport


def build_dataset(cfg, seeds=None):
    seeds = seeds or derive_seeds(cfg.seed)
    ds = cfg.dataset
    return generate(
        ds.label_config(),
        dim=ds.dim,
        per_class=ds.per_class,
        shift_angle=ds.shift_angle,
        shift_offset=ds.offset_vector(),
        spread=ds.spread,
        seed=seeds["dataset"],
        shots=ds.shots,
        prototype_scale=ds.prototype_scale,
        source_test_per_class=ds.source_test_per_class,
        source_per_class=ds.source_per_class,
    )


def pretrain(cfg, pair, seeds=None):
    """Source (label-smoothed CE) and target (contrastive) backbones."""
    seeds = seeds or derive_seeds(cfg.seed)
    arch = cfg.model.arch(cfg.dataset.dim)
    tc = cfg.train_config(seeds["train"])
    lc = pair.label_config
    backbone_s, _ = trainer.pretrain_source(
        pair.source_x, pair.source_y, arch, tc, seeds["pretrain_s"], cfg.model.temperature
    )
    backbone_t = trainer.pretrain_target(
        pair.target_labeled_x, lc.to_local(pair.target_labeled_y), pair.target_unlabeled_x, arch, tc, seeds["pretrain_t"]
    )
    return backbone_s, backbone_t


def build_dual(cfg, backbones, seeds=None):
    seeds = seeds or derive_seeds(cfg.seed)
    arch = cfg.model.arch(cfg.dataset.dim)
    c = cfg.dataset.target_count
    t = cfg.model.temperature
    return netpair.DualNet(
        netpair.init(arch, c, seeds["init_s"], backbone=backbones[0], temperature=t),
        netpair.init(arch, c, seeds["init_t"], backbone=backbones[1], temperature=t),
    )


def run_experiment(cfg, backbones=None, pair=None, unlabeled_order=None):
    """Run the whole pipeline for one config.

    ``backbones`` and ``pair`` may be passed in to reuse earlier work (they
    must come from the same config seed). ``unlabeled_order`` permutes the
    unlabeled pool before training, used to check that a consistency-free
    run ignores it.
    """
    seeds = derive_seeds(cfg.seed)
    pair = pair or build_dataset(cfg, seeds)
    if backbones is None:
        backbones = pretrain(cfg, pair, seeds)
    dual = build_dual(cfg, backbones, seeds)
    tc = cfg.train_config(seeds["train"])
    lc = pair.label_config
    xu, yu = pair.target_unlabeled_x, pair.target_unlabeled_y
    if unlabeled_order is not None:
        xu, yu = xu[unlabeled_order], yu[unlabeled_order]

    def evaluator(d):
        return evalkit.checkpoint_metrics(d, xu, yu, lc, tc.tau)

    initial_s = evalkit.evaluate(dual.theta_s, xu, yu, lc)
    initial_t = evalkit.evaluate(dual.theta_t, xu, yu, lc)
    dual, record = trainer.adapt(
        dual, pair.target_labeled_x, lc.to_local(pair.target_labeled_y), xu, tc, evaluator
    )
    final_s = evalkit.evaluate(dual.theta_s, xu, yu, lc)
    final_t = evalkit.evaluate(dual.theta_t, xu, yu, lc)
    return RunResult(cfg, pair, dual, record, initial_s, initial_t, final_s, final_t)


def run_with_flags(cfg, flags, seed, cache=None):
    """Run ``cfg`` under a given master seed and ablation flags.

    ``cache`` (a dict) memoizes the dataset and pretrained backbones per seed,
    which do not depend on the flags.
    """
    cfg = replace(cfg, seed=seed, ablation=flags)
    cached = None if cache is None else cache.get(seed)
    if cached is None:
        seeds = derive_seeds(seed)
        pair = build_dataset(cfg, seeds)
        cached = (pair, pretrain(cfg, pair, seeds))
        if cache is not None:
            cache[seed] = cached
    return run_experiment(cfg, backbones=cached[1], pair=cached[0])
