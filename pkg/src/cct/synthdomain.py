"""Seeded synthetic source/target domain pairs with mismatched label sets.

Class ids run over ``0 .. total_classes - 1``. The source label set is the
first ``source_count`` ids, the target label set the last ``target_count``
ids, so whether a class is common or private is plain arithmetic.

All randomness goes through ``numpy.random.Generator`` backed by PCG64,
seeded from ``numpy.random.SeedSequence``; the same seed yields the same
arrays on every platform numpy supports.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


def make_rng(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    if isinstance(seed, np.random.SeedSequence):
        return np.random.Generator(np.random.PCG64(seed))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))


@dataclass(frozen=True)
class LabelSetConfig:
    total_classes: int
    source_count: int
    target_count: int

    def __post_init__(self):
        if self.total_classes < 0 or self.source_count < 0 or self.target_count < 0:
            raise ValueError("class counts must be non-negative")
        if self.source_count > self.total_classes or self.target_count > self.total_classes:
            raise ValueError(
                f"source_count={self.source_count} and target_count={self.target_count} "
                f"must not exceed total_classes={self.total_classes}"
            )
        if self.source_count + self.target_count < self.total_classes:
            # a class in neither set would silently vanish from C_s u C_t
            raise ValueError("every class id must belong to the source or the target label set")

    @property
    def target_offset(self):
        return self.total_classes - self.target_count

    @property
    def source_classes(self):
        return list(range(self.source_count))

    @property
    def target_classes(self):
        return list(range(self.target_offset, self.total_classes))

    @property
    def common_classes(self):
        return list(range(self.target_offset, self.source_count))

    @property
    def source_private(self):
        return list(range(min(self.source_count, self.target_offset)))

    @property
    def target_private(self):
        return list(range(max(self.source_count, self.target_offset), self.total_classes))

    def is_common(self, class_id):
        return self.target_offset <= class_id < self.source_count

    def to_local(self, class_ids):
        """Map target class ids to classifier indices ``0 .. target_count - 1``."""
        return np.asarray(class_ids) - self.target_offset

    def to_global(self, local):
        return np.asarray(local) + self.target_offset

    @classmethod
    def from_common(cls, common, source_private, target_private):
        return cls(common + source_private + target_private, common + source_private, common + target_private)


def commonness(cfg):
    """Overlap ratio |C_s n C_t| / |C_s u C_t| of the two label sets."""
    source = set(cfg.source_classes)
    target = set(cfg.target_classes)
    union = source | target
    if not union:
        raise ValueError("commonness is undefined for an empty label-set union")
    return len(source & target) / len(union)


@dataclass(frozen=True)
class AugmentConfig:
    weak_sigma: float = 0.05
    strong_sigma: float = 0.2
    strong_dropout: float = 0.1

    def __post_init__(self):
        if self.weak_sigma < 0:
            raise ValueError("weak_sigma must be >= 0")
        if self.strong_sigma < self.weak_sigma:
            raise ValueError("strong_sigma must be >= weak_sigma")
        if not 0.0 <= self.strong_dropout < 1.0:
            raise ValueError("strong_dropout must lie in [0, 1)")

    @classmethod
    def for_spread(cls, spread, dropout=0.1):
        return cls(weak_sigma=0.05 * spread, strong_sigma=0.2 * spread, strong_dropout=dropout)


def augment(x, mode, cfg, rng):
    """Return a noisy view of ``x`` (a vector or a batch of row vectors)."""
    x = np.asarray(x, dtype=np.float64)
    if mode == "weak":
        if cfg.weak_sigma == 0:
            return x.copy()
        return x + rng.normal(0.0, cfg.weak_sigma, size=x.shape)
    if mode == "strong":
        out = x.copy()
        if cfg.strong_dropout > 0:
            out *= rng.random(x.shape) >= cfg.strong_dropout
        if cfg.strong_sigma > 0:
            out += rng.normal(0.0, cfg.strong_sigma, size=x.shape)
        return out
    raise ValueError(f"unknown augmentation mode {mode!r}")


@dataclass(frozen=True)
class Shift:
    angle: float
    offset: np.ndarray

    def matrix(self, dim):
        a = np.eye(dim)
        c, s = math.cos(self.angle), math.sin(self.angle)
        a[:2, :2] = [[c, -s], [s, c]]
        return a

    def apply(self, points):
        points = np.atleast_2d(points)
        return points @ self.matrix(points.shape[1]).T + self.offset


@dataclass
class DomainPair:
    """Generated data. ``*_y`` arrays hold global class ids.

    ``target_unlabeled_y`` is the hidden truth of the unlabeled pool; it is
    used only for evaluation and diagnostics.
    """

    label_config: LabelSetConfig
    shift: Shift
    prototypes: np.ndarray
    source_x: np.ndarray
    source_y: np.ndarray
    target_labeled_x: np.ndarray
    target_labeled_y: np.ndarray
    target_unlabeled_x: np.ndarray
    target_unlabeled_y: np.ndarray
    source_test_x: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    source_test_y: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))

    @property
    def dim(self):
        return self.source_x.shape[1]

    @property
    def shots(self):
        counts = np.bincount(self.label_config.to_local(self.target_labeled_y), minlength=self.label_config.target_count)
        return int(counts.min()) if counts.size else 0

    def target_all(self):
        x = np.vstack([self.target_labeled_x, self.target_unlabeled_x])
        y = np.concatenate([self.target_labeled_y, self.target_unlabeled_y])
        return x, y


def sample_prototypes(total_classes, dim, rng, scale=1.0):
    return rng.normal(0.0, scale, size=(total_classes, dim))


def generate(
    cfg,
    dim=16,
    per_class=60,
    shift_angle=0.0,
    shift_offset=None,
    spread=1.0,
    seed=0,
    shots=3,
    prototype_scale=1.0,
    source_test_per_class=0,
    source_per_class=None,
):
    """Draw a full domain pair.

    Class prototypes are drawn once; source samples sit around them and
    target samples around their rotated and translated images. The labeled
    target split holds ``shots`` samples per target class.
    """
    if dim < 2:
        raise ValueError("dim must be >= 2")
    if per_class < 1:
        raise ValueError("per_class must be >= 1")
    offset = np.zeros(dim) if shift_offset is None else np.asarray(shift_offset, dtype=np.float64)
    if offset.shape != (dim,):
        raise ValueError(f"shift_offset must have length {dim}, got shape {offset.shape}")
    shift = Shift(float(shift_angle), offset)
    proto_seq, source_seq, target_seq, split_seq, test_seq = np.random.SeedSequence(seed).spawn(5)

    prototypes = sample_prototypes(cfg.total_classes, dim, make_rng(proto_seq), prototype_scale)
    n_source = per_class if source_per_class is None else source_per_class

    rng = make_rng(source_seq)
    source_x, source_y = _draw(prototypes, cfg.source_classes, n_source, spread, rng)
    rng = make_rng(target_seq)
    target_x, target_y = _draw(shift.apply(prototypes), cfg.target_classes, per_class, spread, rng)
    rng = make_rng(test_seq)
    test_x, test_y = _draw(prototypes, cfg.source_classes, source_test_per_class, spread, rng)

    labeled, unlabeled = split_nshot(target_y, shots, split_seq)
    if len(labeled) > len(unlabeled) / 5:
        raise ValueError(
            f"labeled split ({len(labeled)}) must be at most a fifth of the unlabeled pool ({len(unlabeled)})"
        )
    return DomainPair(
        label_config=cfg,
        shift=shift,
        prototypes=prototypes,
        source_x=source_x,
        source_y=source_y,
        target_labeled_x=target_x[labeled],
        target_labeled_y=target_y[labeled],
        target_unlabeled_x=target_x[unlabeled],
        target_unlabeled_y=target_y[unlabeled],
        source_test_x=test_x,
        source_test_y=test_y,
    )


def _draw(means, classes, per_class, spread, rng):
    dim = means.shape[1]
    if not classes or per_class == 0:
        return np.zeros((0, dim)), np.zeros(0, dtype=int)
    y = np.repeat(np.asarray(classes, dtype=int), per_class)
    x = means[y] + rng.normal(0.0, spread, size=(len(y), dim))
    return x, y


def split_nshot(y, k, seed):
    """Pick ``k`` labeled indices per class by seeded shuffle.

    Returns ``(labeled_idx, unlabeled_idx)``, both sorted ascending.
    """
    y = np.asarray(y)
    rng = make_rng(seed)
    labeled = []
    for c in np.unique(y):
        idx = np.flatnonzero(y == c)
        if len(idx) < k + 1:
            raise ValueError(f"class {int(c)} has {len(idx)} samples; n-shot split with k={k} needs at least {k + 1}")
        labeled.extend(rng.permutation(idx)[:k].tolist())
    labeled = np.sort(np.asarray(labeled, dtype=int))
    unlabeled = np.setdiff1d(np.arange(len(y)), labeled)
    return labeled, unlabeled


def dump_csv(pair, directory):
    """Write one CSV per split with header ``id,y,x0..x{d-1}``; y is -1 for unlabeled rows."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    splits = {
        "source": (pair.source_x, pair.source_y),
        "target_labeled": (pair.target_labeled_x, pair.target_labeled_y),
        "target_unlabeled": (pair.target_unlabeled_x, np.full(len(pair.target_unlabeled_x), -1)),
    }
    paths = {}
    for name, (x, y) in splits.items():
        path = directory / f"{name}.csv"
        write_matrix_csv(path, x, y)
        paths[name] = path
    return paths


def write_matrix_csv(path, x, y, prefix="x", extra=None):
    extra = extra or {}
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "y", *extra.keys(), *(f"{prefix}{j}" for j in range(x.shape[1]))])
        for i in range(len(x)):
            w.writerow([i, int(y[i]), *(int(v[i]) for v in extra.values()), *(repr(float(v)) for v in x[i])])


def read_matrix_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    xcols = [j for j, name in enumerate(header) if name[:1] in ("x", "f") and name[1:].isdigit()]
    y = np.array([int(r[1]) for r in body], dtype=int)
    x = np.array([[float(r[j]) for j in xcols] for r in body], dtype=np.float64).reshape(len(body), len(xcols))
    return x, y
