"""Training objectives as differentiable functions of probability matrices.

Probability matrices are ``diffmath.Tensor`` values of shape (n, C) whose
rows sum to one. Pseudo labels come from the weak-view predictions and are
treated as constants; everything else stays on the tape.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffmath as dm
from .diffmath import LOG_EPS


@dataclass
class ConsistencyBatch:
    """Predictions of both networks on the weak (1) and strong (2) views."""

    ps1: dm.Tensor
    ps2: dm.Tensor
    pt1: dm.Tensor
    pt2: dm.Tensor
    tau: float = 0.95

    def __post_init__(self):
        shapes = {m.shape for m in (self.ps1, self.ps2, self.pt1, self.pt2)}
        if len(shapes) != 1:
            raise dm.ShapeError(f"batch matrices disagree in shape: {sorted(shapes)}")
        if not 0.5 < self.tau <= 1.0:
            raise ValueError("tau must lie in (0.5, 1]")

    @property
    def num_classes(self):
        return self.ps1.shape[1]

    def swapped(self):
        return ConsistencyBatch(self.pt1, self.pt2, self.ps1, self.ps2, self.tau)


@dataclass(frozen=True)
class LossWeights:
    lambda1: float = 1.0
    lambda2: float = 1.0

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("loss weights must be non-negative")


@dataclass(frozen=True)
class LossFlags:
    """Which consistency terms are active (the ablation switches)."""

    sample_inner: bool = True
    class_inner: bool = True
    sample_cross: bool = True
    class_cross: bool = True

    def as_tuple(self):
        return (self.sample_inner, self.class_inner, self.sample_cross, self.class_cross)

    def label(self):
        names = ("sample_inner", "class_inner", "sample_cross", "class_cross")
        return "+".join(n for n, on in zip(names, self.as_tuple()) if on) or "none"


# the six rows of the component ablation, in order a-f
ABLATION_ROWS = {
    "a": LossFlags(False, False, False, False),
    "b": LossFlags(True, False, False, False),
    "c": LossFlags(True, False, True, False),
    "d": LossFlags(True, True, False, False),
    "e": LossFlags(False, False, True, True),
    "f": LossFlags(True, True, True, True),
}


# -- pseudo labels -----------------------------------------------------------
def pseudo_label(row, tau):
    """``(class, confidence)`` if the top probability reaches ``tau``, else None."""
    row = np.asarray(row, dtype=np.float64).ravel()
    k = int(np.argmax(row))
    return (k, float(row[k])) if row[k] >= tau else None


def _pseudo_mask(p, tau):
    """One-hot (n, C) constant with a single 1 on confident rows, zeros elsewhere."""
    data = p.data if isinstance(p, dm.Tensor) else np.asarray(p)
    n = data.shape[0]
    top = data.argmax(axis=1)
    mask = np.zeros_like(data)
    keep = data[np.arange(n), top] >= tau
    mask[np.arange(n)[keep], top[keep]] = 1.0
    return mask


def _entropy(p):
    p = np.asarray(p, dtype=np.float64)
    return float(-(p * np.log(p + LOG_EPS)).sum())


def ensemble_weight(ps, pt):
    hs, ht = _entropy(ps), _entropy(pt)
    if hs + ht == 0:
        return 0.5
    return ht / (hs + ht)


def ensemble_pseudo_label(ps, pt, tau, mode="mean"):
    ps = np.asarray(ps, dtype=np.float64).ravel()
    pt = np.asarray(pt, dtype=np.float64).ravel()
    if mode == "mean":
        q = 0.5 * (ps + pt)
    elif mode == "entropy_weighted":
        w = ensemble_weight(ps, pt)
        q = w * ps + (1.0 - w) * pt
    else:
        raise ValueError(f"unknown ensemble mode {mode!r}")
    hit = pseudo_label(q, tau)
    return None if hit is None else hit[0]


def _ensemble_mask(ps, pt, tau, mode):
    ps, pt = ps.data, pt.data
    mask = np.zeros_like(ps)
    for i in range(ps.shape[0]):
        k = ensemble_pseudo_label(ps[i], pt[i], tau, mode)
        if k is not None:
            mask[i, k] = 1.0
    return mask


# -- sample-wise consistency -------------------------------------------------
def _masked_nll(mask, p):
    # mean over rows of -sum(mask * log p); exactly 0 when the mask is empty
    n = p.shape[0]
    if not mask.any():
        return dm.Tensor(np.zeros((1, 1)))
    return dm.scale(dm.total(dm.mul(mask, dm.log(p))), -1.0 / n)


def sample_inner(b):
    ms = _pseudo_mask(b.ps1, b.tau)
    mt = _pseudo_mask(b.pt1, b.tau)
    return _masked_nll(ms, b.ps2) + _masked_nll(mt, b.pt2)


def sample_cross(b):
    ms = _pseudo_mask(b.ps1, b.tau)
    mt = _pseudo_mask(b.pt1, b.tau)
    return _masked_nll(ms, b.pt2) + _masked_nll(mt, b.ps2)


def sample_ensemble(b, mode="mean"):
    """Both strong views supervised by one pseudo label from the averaged weak views."""
    m = _ensemble_mask(b.ps1, b.pt1, b.tau, mode)
    return _masked_nll(m, b.ps2) + _masked_nll(m, b.pt2)


def sample_loss(b, flags=None, strategy="cct"):
    flags = flags or LossFlags()
    if strategy != "cct":
        if not (flags.sample_inner or flags.sample_cross):
            return dm.Tensor(np.zeros((1, 1)))
        return sample_ensemble(b, strategy)
    out = dm.Tensor(np.zeros((1, 1)))
    if flags.sample_inner:
        out = out + sample_inner(b)
    if flags.sample_cross:
        out = out + sample_cross(b)
    return dm.scale(out, 0.5)


# -- class-wise consistency --------------------------------------------------
def corr_normalized(p1, p2):
    """Row-normalized symmetric part of ``p1.T @ p2`` (a C x C matrix)."""
    if p1.shape != p2.shape:
        raise dm.ShapeError(f"corr_normalized shape mismatch: {p1.shape} vs {p2.shape}")
    r = dm.matmul(dm.transpose(p1), p2)
    sym = dm.scale(r + dm.transpose(r), 0.5)
    return dm.row_normalize(sym)


def _trace_term(pairs, c):
    tr = None
    for a, b in pairs:
        t = dm.trace(corr_normalized(a, b))
        tr = t if tr is None else tr + t
    return dm.scale(tr, -1.0 / (2 * c))


def class_inner(b):
    return _trace_term([(b.ps1, b.ps2), (b.pt1, b.pt2)], b.num_classes)


def class_cross(b):
    return _trace_term([(b.ps1, b.pt2), (b.pt1, b.ps2)], b.num_classes)


def class_loss(b, flags=None):
    flags = flags or LossFlags()
    out = dm.Tensor(np.zeros((1, 1)))
    if flags.class_inner:
        out = out + class_inner(b)
    if flags.class_cross:
        out = out + class_cross(b)
    return dm.scale(out, 0.5)


# -- supervised terms --------------------------------------------------------
def one_hot(labels, num_classes):
    labels = np.asarray(labels, dtype=int)
    out = np.zeros((len(labels), num_classes))
    out[np.arange(len(labels)), labels] = 1.0
    return out


def cross_entropy(p, y):
    """Mean over rows of ``-sum(y * log p)`` for a target matrix ``y``."""
    y = np.asarray(y, dtype=np.float64)
    return dm.scale(dm.total(dm.mul(y, dm.log(p))), -1.0 / p.shape[0])


def ce_labeled(ps, pt, y):
    """Cross entropy of both networks against the same one-hot targets."""
    if ps.shape != pt.shape or ps.shape != np.shape(y):
        raise dm.ShapeError(f"ce_labeled shape mismatch: {ps.shape}, {pt.shape}, {np.shape(y)}")
    return cross_entropy(ps, y) + cross_entropy(pt, y)


def label_smooth_ce(p, y, eps=0.1):
    if not 0.0 <= eps < 1.0:
        raise ValueError("label smoothing eps must lie in [0, 1)")
    y = np.asarray(y, dtype=np.float64)
    c = y.shape[1]
    return cross_entropy(p, (1.0 - eps) * y + eps / c)


def total_objective(ce, sample, cls, w):
    return ce + dm.scale(sample, w.lambda1) + dm.scale(cls, w.lambda2)


# -- contrastive pretraining -------------------------------------------------
def contrastive_positive_mask(labels, n):
    """(2n, 2n) positive-pair mask for two stacked views of ``n`` samples.

    Row ``i`` and row ``i + n`` are the two views of sample ``i``. Labeled
    rows (label >= 0) are positive with every other row of the same label;
    unlabeled rows (label < 0 or None) only with their paired view.
    """
    m = 2 * n
    idx = np.arange(m)
    pos = np.zeros((m, m))
    pos[idx, (idx + n) % m] = 1.0
    if labels is not None:
        lab = np.asarray([-1 if v is None else v for v in labels], dtype=int)
        lab = np.concatenate([lab, lab])
        known = lab >= 0
        same = (lab[:, None] == lab[None, :]) & known[:, None] & known[None, :]
        pos = np.maximum(pos, same.astype(float))
    np.fill_diagonal(pos, 0.0)
    return pos


def contrastive_pretrain_loss(feats, labels=None, temperature=0.1):
    """SupCon for labeled anchors, NT-Xent for unlabeled anchors, averaged.

    ``feats`` stacks view one of all samples on top of view two.
    """
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    m = feats.shape[0]
    if m % 2:
        raise dm.ShapeError(f"expected two stacked views, got {m} rows")
    n = m // 2
    pos = contrastive_positive_mask(labels, n)
    z = dm.normalize_rows(feats)
    sim = dm.scale(dm.matmul(z, dm.transpose(z)), 1.0 / temperature)
    # the row max is a constant shift; it cancels in log-softmax
    shift = sim.data.max(axis=1, keepdims=True)
    not_self = 1.0 - np.eye(m)
    logits = dm.sub(sim, shift)
    denom = dm.row_sum(dm.mul(dm.exp(logits), not_self))
    log_prob = dm.sub(logits, dm.log(denom, eps=0.0))
    weights = pos / pos.sum(axis=1, keepdims=True)
    return dm.scale(dm.total(dm.mul(weights, log_prob)), -1.0 / m)


# -- optimality analysis -----------------------------------------------------
def frobenius_gap(p1, p2):
    p1 = np.asarray(getattr(p1, "data", p1), dtype=np.float64)
    p2 = np.asarray(getattr(p2, "data", p2), dtype=np.float64)
    if p1.ndim != 2 or p1.shape[0] != p1.shape[1] or p1.shape != p2.shape:
        raise ValueError(f"frobenius_gap needs two equal square matrices, got {p1.shape} and {p2.shape}")
    g = 0.5 * (p1.T @ p2 + p2.T @ p1) - np.eye(p1.shape[0])
    return float(np.linalg.norm(g, "fro"))
