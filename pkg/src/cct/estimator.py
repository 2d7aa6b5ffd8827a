"""scikit-learn compatible wrapper around the collaborative training pipeline."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.multiclass import check_classification_targets
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from . import netpair, trainer
from .losses import LossFlags


class CCTClassifier(ClassifierMixin, TransformerMixin, BaseEstimator):
    """Adapt a source-pretrained network to a target domain with few labels.

    ``fit(X, y)`` takes target samples with ``y == -1`` marking unlabeled
    rows, following the scikit-learn semi-supervised convention. The source
    side enters either as labeled source data (``X_source``, ``y_source``),
    from which a backbone is pretrained, or directly as a pretrained
    ``source_backbone`` (a list of ``(W, b)`` arrays).

    The target label set is the set of labels seen in ``y``; ``predict``
    returns labels from ``classes_`` using the source-initialized network.

    Parameters mirror ``trainer.TrainConfig``; ``weak_sigma`` and
    ``strong_sigma`` default to 5% and 20% of the average per-feature
    standard deviation of the target data.
    """

    def __init__(
        self,
        hidden=(64, 64),
        activation="tanh",
        temperature=0.05,
        iterations=600,
        batch_labeled=16,
        batch_unlabeled=32,
        lr_backbone=0.01,
        lr_classifier=0.1,
        momentum=0.9,
        tau=0.95,
        lambda1=1.0,
        lambda2=0.5,
        pretrain_epochs_source=20,
        pretrain_epochs_target=20,
        pretrain_lr=0.05,
        pretrain_lr_source=0.02,
        label_smoothing=0.1,
        contrastive_temperature=0.5,
        weak_sigma=None,
        strong_sigma=None,
        strong_dropout=0.1,
        pl_strategy="cct",
        flags=None,
        eval_every=20,
        random_state=None,
    ):
        self.hidden = hidden
        self.activation = activation
        self.temperature = temperature
        self.iterations = iterations
        self.batch_labeled = batch_labeled
        self.batch_unlabeled = batch_unlabeled
        self.lr_backbone = lr_backbone
        self.lr_classifier = lr_classifier
        self.momentum = momentum
        self.tau = tau
        self.lambda1 = lambda1
        self.lambda2 = lambda2
        self.pretrain_epochs_source = pretrain_epochs_source
        self.pretrain_epochs_target = pretrain_epochs_target
        self.pretrain_lr = pretrain_lr
        self.pretrain_lr_source = pretrain_lr_source
        self.label_smoothing = label_smoothing
        self.contrastive_temperature = contrastive_temperature
        self.weak_sigma = weak_sigma
        self.strong_sigma = strong_sigma
        self.strong_dropout = strong_dropout
        self.pl_strategy = pl_strategy
        self.flags = flags
        self.eval_every = eval_every
        self.random_state = random_state

    def _train_config(self, X, seed):
        scale = float(np.mean(np.std(X, axis=0))) or 1.0
        return trainer.TrainConfig(
            iterations=self.iterations,
            batch_labeled=self.batch_labeled,
            batch_unlabeled=self.batch_unlabeled,
            lr_backbone=self.lr_backbone,
            lr_classifier=self.lr_classifier,
            momentum=self.momentum,
            tau=self.tau,
            lambda1=self.lambda1,
            lambda2=self.lambda2,
            pretrain_epochs_source=self.pretrain_epochs_source,
            pretrain_epochs_target=self.pretrain_epochs_target,
            pretrain_lr=self.pretrain_lr,
            pretrain_lr_source=self.pretrain_lr_source,
            label_smoothing=self.label_smoothing,
            contrastive_temperature=self.contrastive_temperature,
            eval_every=self.eval_every,
            seed=seed,
            pl_strategy=self.pl_strategy,
            weak_sigma=0.05 * scale if self.weak_sigma is None else self.weak_sigma,
            strong_sigma=0.2 * scale if self.strong_sigma is None else self.strong_sigma,
            strong_dropout=self.strong_dropout,
            flags=LossFlags() if self.flags is None else self.flags,
        )

    def fit(self, X, y, X_source=None, y_source=None, source_backbone=None):
        X, y = check_X_y(X, y, dtype=np.float64)
        check_classification_targets(y)
        labeled = y != -1
        if not labeled.any():
            raise ValueError("at least one labeled target sample (y != -1) is required")
        if labeled.all():
            raise ValueError("at least one unlabeled target sample (y == -1) is required")
        self.classes_ = np.unique(y[labeled])
        self.n_features_in_ = X.shape[1]
        arch = netpair.Arch(X.shape[1], tuple(self.hidden), self.activation)

        root = np.random.SeedSequence(self.random_state)
        src_seq, tgt_seq, init_s, init_t, train_seq = root.spawn(5)
        cfg = self._train_config(X, int(train_seq.generate_state(1, np.uint64)[0]))

        if source_backbone is None:
            if X_source is None or y_source is None:
                raise ValueError("pass either X_source/y_source or a pretrained source_backbone")
            X_source, y_source = check_X_y(X_source, y_source, dtype=np.float64)
            if X_source.shape[1] != X.shape[1]:
                raise ValueError(f"X_source has {X_source.shape[1]} features, X has {X.shape[1]}")
            _, src_local = np.unique(y_source, return_inverse=True)
            source_backbone, _ = trainer.pretrain_source(X_source, src_local, arch, cfg, src_seq, self.temperature)

        y_local = np.searchsorted(self.classes_, y[labeled])
        xl, xu = X[labeled], X[~labeled]
        target_backbone = trainer.pretrain_target(xl, y_local, xu, arch, cfg, tgt_seq)
        c = len(self.classes_)
        dual = netpair.DualNet(
            netpair.init(arch, c, init_s, backbone=source_backbone, temperature=self.temperature),
            netpair.init(arch, c, init_t, backbone=target_backbone, temperature=self.temperature),
        )
        self.dual_, self.record_ = trainer.adapt(dual, xl, y_local, xu, cfg)
        self.source_backbone_ = source_backbone
        return self

    def _check(self, X):
        check_is_fitted(self, "dual_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, the model was fitted with {self.n_features_in_}")
        return X

    def predict_proba(self, X, network="s"):
        X = self._check(X)
        net = self.dual_.theta_s if network == "s" else self.dual_.theta_t
        return netpair.predict_proba(net, X)

    def predict(self, X):
        idx = self.predict_proba(X).argmax(axis=1)
        return self.classes_[idx]

    def transform(self, X):
        """Backbone features of the source-initialized network."""
        X = self._check(X)
        return netpair.features(self.dual_.theta_s, X).data
