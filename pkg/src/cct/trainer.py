"""Backbone pretraining and the collaborative adaptation loop."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import diffmath as dm
from . import losses as L
from . import netpair
from .synthdomain import AugmentConfig, augment, make_rng

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    iterations: int = 600
    batch_labeled: int = 16
    batch_unlabeled: int = 32
    lr_backbone: float = 0.01
    lr_classifier: float = 0.1
    momentum: float = 0.9
    tau: float = 0.95
    lambda1: float = 1.0
    lambda2: float = 0.5
    pretrain_epochs_source: int = 20
    pretrain_epochs_target: int = 20
    pretrain_batch: int = 32
    pretrain_lr: float = 0.05
    pretrain_lr_source: float = 0.02
    label_smoothing: float = 0.1
    contrastive_temperature: float = 0.5
    eval_every: int = 20
    seed: int = 0
    pl_strategy: str = "cct"
    weak_sigma: float = 0.05
    strong_sigma: float = 0.2
    strong_dropout: float = 0.1
    flags: L.LossFlags = field(default_factory=L.LossFlags)

    def __post_init__(self):
        if isinstance(self.flags, dict):
            self.flags = L.LossFlags(**self.flags)
        positive = ("batch_labeled", "batch_unlabeled", "lr_backbone", "lr_classifier", "eval_every",
                    "pretrain_batch", "pretrain_lr", "pretrain_lr_source", "contrastive_temperature")
        for name in positive:
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)!r}")
        for name in ("iterations", "pretrain_epochs_source", "pretrain_epochs_target"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative, got {getattr(self, name)!r}")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        if not 0.5 < self.tau <= 1.0:
            raise ValueError("tau must lie in (0.5, 1]")
        if self.lr_classifier < self.lr_backbone:
            raise ValueError("lr_classifier must be >= lr_backbone")
        if self.pl_strategy not in ("cct", "mean", "entropy_weighted"):
            raise ValueError(f"unknown pl_strategy {self.pl_strategy!r}")
        L.LossWeights(self.lambda1, self.lambda2)
        self.augment_config()

    @property
    def weights(self):
        return L.LossWeights(self.lambda1, self.lambda2)

    def augment_config(self):
        return AugmentConfig(self.weak_sigma, self.strong_sigma, self.strong_dropout)

    def to_dict(self):
        d = asdict(self)
        d["flags"] = asdict(self.flags)
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown train fields: {sorted(unknown)}")
        return cls(**d)


RECORD_COLUMNS = (
    "iter", "loss_ce", "loss_sample", "loss_class", "h_s", "h_t",
    "acc_common_s", "acc_private_s", "acc_common_t", "acc_private_t",
    "pl_coverage", "pl_precision",
)


@dataclass
class RunRecord:
    rows: list = field(default_factory=list)

    def append(self, row):
        self.rows.append({k: row.get(k, float("nan")) for k in RECORD_COLUMNS})

    def column(self, name):
        return np.array([r[name] for r in self.rows], dtype=float)

    def __len__(self):
        return len(self.rows)


# -- optimizer -----------------------------------------------------------------
def sgd_step(params, grads, lrs, velocity, momentum):
    """In-place SGD with momentum: ``v = mu * v + g``; ``p -= lr * v``.

    ``params``, ``grads`` and ``velocity`` are parallel lists of arrays and
    ``lrs`` gives one learning rate per entry.
    """
    if not (len(params) == len(grads) == len(velocity) == len(lrs)):
        raise ValueError("params, grads, velocity and lrs must align")
    for p, g, v, lr in zip(params, grads, velocity, lrs):
        if p.shape != g.shape or p.shape != v.shape:
            raise ValueError(f"shape mismatch: param {p.shape}, grad {g.shape}, velocity {v.shape}")
        v *= momentum
        v += g
        p -= lr * v
    return params


class SGD:
    def __init__(self, groups, lrs, momentum=0.9):
        missing = set(groups) - set(lrs)
        if missing:
            raise ValueError(f"no learning rate for groups {sorted(missing)}")
        self.params = [t for name in groups for t in groups[name]]
        self.lrs = [lrs[name] for name in groups for _ in groups[name]]
        self.momentum = momentum
        self.velocity = [np.zeros_like(t.data) for t in self.params]

    def zero_grad(self):
        for t in self.params:
            t.zero_grad()

    def step(self):
        sgd_step([t.data for t in self.params], [t.grad for t in self.params], self.lrs, self.velocity, self.momentum)


# -- batching ------------------------------------------------------------------
class Sampler:
    """Endless reshuffled minibatches of row indices."""

    def __init__(self, n, batch, rng):
        if n <= 0:
            raise ValueError("cannot sample batches from an empty pool")
        self.n, self.batch, self.rng = n, batch, rng
        self._order = np.zeros(0, dtype=int)

    def next(self):
        while len(self._order) < self.batch:
            self._order = np.concatenate([self._order, self.rng.permutation(self.n)])
        out, self._order = self._order[: self.batch], self._order[self.batch:]
        return out


def _seed_sequence(seed):
    return seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)


def _epoch_batches(n, batch, rng):
    order = rng.permutation(n)
    return [order[i:i + batch] for i in range(0, n, batch)]


# -- pretraining -----------------------------------------------------------------
def pretrain_source(x, y, arch, cfg, seed, temperature=0.05, history=None):
    """Train a backbone on labeled source data with label-smoothed CE.

    ``y`` holds classifier indices ``0 .. C_s - 1``. A temporary classifier
    over the source classes is trained alongside. Returns the backbone as a
    list of ``(W, b)`` arrays together with the whole source network, which
    callers use only for diagnostics.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=int)
    if len(x) == 0:
        raise ValueError("source data is empty")
    init_seq, batch_seq = _seed_sequence(seed).spawn(2)
    num_classes = int(y.max()) + 1
    net = netpair.init(arch, num_classes, init_seq, temperature=temperature)
    opt = SGD({"all": net.parameters()}, {"all": cfg.pretrain_lr_source}, cfg.momentum)
    rng = make_rng(batch_seq)
    targets = L.one_hot(y, num_classes)
    for epoch in range(cfg.pretrain_epochs_source):
        total, count = 0.0, 0
        for idx in _epoch_batches(len(x), cfg.pretrain_batch, rng):
            opt.zero_grad()
            _, p = netpair.forward(net, x[idx])
            loss = L.label_smooth_ce(p, targets[idx], cfg.label_smoothing)
            loss.backward()
            opt.step()
            total += loss.item() * len(idx)
            count += len(idx)
        if history is not None:
            history.append(total / count)
        log.debug("source pretrain epoch %d loss %.4f", epoch, total / count)
    return net.backbone_arrays(), net


def pretrain_target(xl, yl, xu, arch, cfg, seed, history=None):
    """Contrastive backbone pretraining on target data only.

    Labeled rows (classifier indices in ``yl``) use supervised-contrastive
    positives; unlabeled rows use their paired view. Each step mixes up to
    ``batch_labeled`` labeled and ``batch_unlabeled`` unlabeled samples, two
    strong views each.
    """
    xl = np.asarray(xl, dtype=np.float64)
    xu = np.asarray(xu, dtype=np.float64)
    yl = np.asarray(yl, dtype=int)
    if len(xl) == 0 or len(xu) == 0:
        raise ValueError("target pretraining needs labeled and unlabeled samples")
    init_seq, batch_seq, aug_seq = _seed_sequence(seed).spawn(3)
    net = netpair.init(arch, 1, init_seq)
    opt = SGD({"backbone": net.backbone_tensors()}, {"backbone": cfg.pretrain_lr}, cfg.momentum)
    rng, aug_rng = make_rng(batch_seq), make_rng(aug_seq)
    aug = cfg.augment_config()
    labeled = Sampler(len(xl), min(cfg.batch_labeled, len(xl)), rng)
    per_step = cfg.pretrain_batch
    steps = cfg.pretrain_epochs_target * max(1, -(-len(xu) // per_step))
    unlabeled = Sampler(len(xu), per_step, rng)
    window = []
    for step in range(steps):
        li, ui = labeled.next(), unlabeled.next()
        xb = np.vstack([xl[li], xu[ui]])
        labels = np.concatenate([yl[li], np.full(len(ui), -1)])
        v1 = augment(xb, "strong", aug, aug_rng)
        v2 = augment(xb, "strong", aug, aug_rng)
        opt.zero_grad()
        f = netpair.features(net, np.vstack([v1, v2]))
        loss = L.contrastive_pretrain_loss(f, labels, cfg.contrastive_temperature)
        loss.backward()
        opt.step()
        window.append(loss.item())
        if history is not None and (step + 1) % max(1, steps // max(1, cfg.pretrain_epochs_target)) == 0:
            history.append(float(np.mean(window)))
            window = []
    return net.backbone_arrays()


# -- adaptation ----------------------------------------------------------------
def consistency_terms(dual, xu_weak, xu_strong, cfg):
    """Sample- and class-wise losses on one unlabeled batch.

    A term whose weight is zero, or whose flags are all off, is not built and
    comes back as None.
    """
    flags = cfg.flags
    need_sample = cfg.lambda1 > 0 and (flags.sample_inner or flags.sample_cross)
    need_class = cfg.lambda2 > 0 and (flags.class_inner or flags.class_cross)
    if not (need_sample or need_class):
        return None, None
    _, ps1 = netpair.forward(dual.theta_s, xu_weak)
    _, ps2 = netpair.forward(dual.theta_s, xu_strong)
    _, pt1 = netpair.forward(dual.theta_t, xu_weak)
    _, pt2 = netpair.forward(dual.theta_t, xu_strong)
    batch = L.ConsistencyBatch(ps1, ps2, pt1, pt2, cfg.tau)
    sample = L.sample_loss(batch, flags, cfg.pl_strategy) if need_sample else None
    cls = L.class_loss(batch, flags) if need_class else None
    return sample, cls


def adapt(dual, xl, yl, xu, cfg, evaluator=None):
    """Collaborative consistency training of both networks.

    ``yl`` holds classifier indices. ``evaluator(dual)`` is called every
    ``cfg.eval_every`` iterations (and after the last one) and should return
    a dict of metric columns; the mean losses over the window are added.
    Labeled batches, unlabeled batches and augmentations draw from separate
    streams, so with both consistency weights at zero the unlabeled pool has
    no effect on the run.
    """
    xl = np.asarray(xl, dtype=np.float64)
    yl = np.asarray(yl, dtype=int)
    xu = np.asarray(xu, dtype=np.float64)
    if len(xl) == 0:
        raise ValueError("labeled target pool is empty")
    if len(xu) == 0:
        raise ValueError("unlabeled target pool is empty")
    num_classes = dual.theta_s.num_classes
    targets = L.one_hot(yl, num_classes)
    lab_seq, unl_seq, aug_seq = np.random.SeedSequence(cfg.seed).spawn(3)
    lab = Sampler(len(xl), cfg.batch_labeled, make_rng(lab_seq))
    unl = Sampler(len(xu), cfg.batch_unlabeled, make_rng(unl_seq))
    aug_rng = make_rng(aug_seq)
    aug = cfg.augment_config()
    opt = SGD(dual.groups(), {"backbone": cfg.lr_backbone, "classifier": cfg.lr_classifier}, cfg.momentum)
    record = RunRecord()
    sums = np.zeros(3)
    count = 0
    for it in range(1, cfg.iterations + 1):
        li = lab.next()
        opt.zero_grad()
        _, ps = netpair.forward(dual.theta_s, xl[li])
        _, pt = netpair.forward(dual.theta_t, xl[li])
        ce = L.ce_labeled(ps, pt, targets[li])
        objective = ce
        sample = cls = None
        if cfg.lambda1 > 0 or cfg.lambda2 > 0:
            ui = unl.next()
            xw = augment(xu[ui], "weak", aug, aug_rng)
            xs = augment(xu[ui], "strong", aug, aug_rng)
            sample, cls = consistency_terms(dual, xw, xs, cfg)
            if sample is not None:
                objective = objective + dm.scale(sample, cfg.lambda1)
            if cls is not None:
                objective = objective + dm.scale(cls, cfg.lambda2)
        objective.backward()
        opt.step()
        sums += [ce.item(), 0.0 if sample is None else sample.item(), 0.0 if cls is None else cls.item()]
        count += 1
        if it % cfg.eval_every == 0 or it == cfg.iterations:
            row = {"iter": it, "loss_ce": sums[0] / count, "loss_sample": sums[1] / count, "loss_class": sums[2] / count}
            if evaluator is not None:
                row.update(evaluator(dual))
            record.append(row)
            sums[:] = 0.0
            count = 0
    return dual, record
