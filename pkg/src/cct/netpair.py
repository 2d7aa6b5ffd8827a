"""MLP backbone plus L2-normalized (spherical) classifier, and the network pair."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import diffmath as dm
from .synthdomain import make_rng

CHECKPOINT_VERSION = 1

_ACTIVATIONS = {"tanh": dm.tanh, "relu": dm.relu}


@dataclass(frozen=True)
class Arch:
    input_dim: int = 16
    hidden: tuple = (64, 64)
    activation: str = "tanh"

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.input_dim < 1 or not self.hidden or min(self.hidden) < 1:
            raise ValueError(f"invalid architecture {self}")
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def feat_dim(self):
        return self.hidden[-1]

    @property
    def layer_dims(self):
        dims = (self.input_dim, *self.hidden)
        return list(zip(dims[:-1], dims[1:]))


@dataclass
class NetParams:
    """Parameters of one network.

    ``layers`` holds ``(W, b)`` pairs with ``W`` of shape ``(fan_in, fan_out)``
    and ``b`` of shape ``(1, fan_out)``. ``classifier`` is ``(C, feat_dim)``
    and carries no bias.
    """

    arch: Arch
    layers: list
    classifier: dm.Tensor
    temperature: float = 0.05

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        for (w, b), (fi, fo) in zip(self.layers, self.arch.layer_dims):
            if w.shape != (fi, fo) or b.shape != (1, fo):
                raise dm.ShapeError(f"layer shapes {w.shape}, {b.shape} do not chain as ({fi}, {fo})")
        if len(self.layers) != len(self.arch.layer_dims):
            raise dm.ShapeError("layer count does not match architecture")
        if self.classifier.shape[1] != self.arch.feat_dim:
            raise dm.ShapeError(
                f"classifier shape {self.classifier.shape} does not match feature dim {self.arch.feat_dim}"
            )

    @property
    def num_classes(self):
        return self.classifier.shape[0]

    def backbone_tensors(self):
        return [t for layer in self.layers for t in layer]

    def parameters(self):
        return self.backbone_tensors() + [self.classifier]

    def groups(self):
        """Parameter groups keyed by learning-rate group name."""
        return {"backbone": self.backbone_tensors(), "classifier": [self.classifier]}

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def copy(self):
        return NetParams(
            self.arch,
            [(_leaf(w.data), _leaf(b.data)) for w, b in self.layers],
            _leaf(self.classifier.data),
            self.temperature,
        )

    def backbone_arrays(self):
        return [(w.data.copy(), b.data.copy()) for w, b in self.layers]


def _leaf(arr):
    return dm.Tensor(np.array(arr, dtype=np.float64), requires_grad=True)


def init_backbone(arch, rng):
    """He-style fan-in scaled normal weights, zero biases."""
    layers = []
    for fan_in, fan_out in arch.layer_dims:
        w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out))
        layers.append((w, np.zeros((1, fan_out))))
    return layers


def init_classifier(num_classes, feat_dim, rng, scale=0.1):
    return rng.normal(0.0, scale, size=(num_classes, feat_dim))


def init(arch, num_classes, seed, backbone=None, temperature=0.05, classifier_scale=0.1):
    """Build a network.

    ``backbone`` is either None (fresh init) or a list of ``(W, b)`` arrays
    copied from a pretrained donor. The classifier is always fresh.
    """
    rng = make_rng(seed)
    fresh = init_backbone(arch, rng)
    layers = fresh if backbone is None else [(np.array(w), np.array(b)) for w, b in backbone]
    clf = init_classifier(num_classes, arch.feat_dim, rng, classifier_scale)
    return NetParams(arch, [(_leaf(w), _leaf(b)) for w, b in layers], _leaf(clf), temperature)


def features(p, x):
    act = _ACTIVATIONS[p.arch.activation]
    h = x if isinstance(x, dm.Tensor) else dm.Tensor(x)
    if h.shape[1] != p.arch.input_dim:
        raise dm.ShapeError(f"input has {h.shape[1]} columns, network expects {p.arch.input_dim}")
    for w, b in p.layers:
        h = act(h @ w + b)
    return h


def logits_from_features(p, feats, classifier=None):
    w = p.classifier if classifier is None else classifier
    z = dm.normalize_rows(feats) @ w.T
    return z / p.temperature


def forward(p, x):
    """Return ``(features, probs)`` for a batch ``x`` of shape (n, input_dim)."""
    f = features(p, x)
    return f, dm.softmax_rows(logits_from_features(p, f))


def predict_proba(p, x):
    return forward(p, np.asarray(x, dtype=np.float64))[1].data


@dataclass
class DualNet:
    theta_s: NetParams
    theta_t: NetParams

    def __post_init__(self):
        if self.theta_s.arch != self.theta_t.arch:
            raise ValueError("both networks must share one architecture")
        if self.theta_s.num_classes != self.theta_t.num_classes:
            raise ValueError("both classifiers must cover the same target label set")

    def parameters(self):
        return self.theta_s.parameters() + self.theta_t.parameters()

    def groups(self):
        gs, gt = self.theta_s.groups(), self.theta_t.groups()
        return {k: gs[k] + gt[k] for k in gs}

    def zero_grad(self):
        self.theta_s.zero_grad()
        self.theta_t.zero_grad()

    def copy(self):
        return DualNet(self.theta_s.copy(), self.theta_t.copy())


# -- checkpoints -------------------------------------------------------------
# JSON with repr() floats: Python's float repr round-trips exactly.


def params_to_dict(p):
    return {
        "arch": {"input_dim": p.arch.input_dim, "hidden": list(p.arch.hidden), "activation": p.arch.activation},
        "temperature": p.temperature,
        "layers": [{"W": w.data.tolist(), "b": b.data.tolist()} for w, b in p.layers],
        "classifier": p.classifier.data.tolist(),
    }


def params_from_dict(d):
    arch = Arch(**d["arch"])
    layers = [(_leaf(layer["W"]), _leaf(layer["b"])) for layer in d["layers"]]
    clf = np.array(d["classifier"], dtype=np.float64).reshape(-1, arch.feat_dim)
    return NetParams(arch, layers, _leaf(clf), float(d["temperature"]))


def save_checkpoint(path, net, meta=None):
    if isinstance(net, DualNet):
        payload = {"kind": "dual", "theta_s": params_to_dict(net.theta_s), "theta_t": params_to_dict(net.theta_t)}
    else:
        payload = {"kind": "single", "params": params_to_dict(net)}
    payload["version"] = CHECKPOINT_VERSION
    payload["meta"] = meta or {}
    Path(path).write_text(json.dumps(payload))
    return Path(path)


def load_checkpoint(path):
    payload = json.loads(Path(path).read_text())
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {payload.get('version')!r}")
    if payload["kind"] == "dual":
        return DualNet(params_from_dict(payload["theta_s"]), params_from_dict(payload["theta_t"]))
    return params_from_dict(payload["params"])


def arch_to_dict(arch):
    d = asdict(arch)
    d["hidden"] = list(arch.hidden)
    return d
