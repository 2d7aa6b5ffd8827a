import numpy as np
import pytest

from cct import diffmath as dm
from cct import netpair as npair

ARCH = npair.Arch(6, (8, 5), "tanh")


def test_arch_dims():
    assert ARCH.layer_dims == [(6, 8), (8, 5)]
    assert ARCH.feat_dim == 5
    with pytest.raises(ValueError):
        npair.Arch(6, (8,), "sigmoid")
    with pytest.raises(ValueError):
        npair.Arch(0, (8,))


class TestInit:
    def test_same_seed_same_params(self):
        a, b = npair.init(ARCH, 4, 3), npair.init(ARCH, 4, 3)
        for x, y in zip(a.parameters(), b.parameters()):
            assert x.data.tobytes() == y.data.tobytes()

    def test_copied_backbone(self):
        donor = npair.init(ARCH, 3, 0)
        net = npair.init(ARCH, 4, 1, backbone=donor.backbone_arrays())
        for (w, b), (dw, db) in zip(net.layers, donor.layers):
            assert w.data.tobytes() == dw.data.tobytes()
            assert b.data.tobytes() == db.data.tobytes()
        assert net.classifier.shape == (4, 5)
        fresh = npair.init(ARCH, 4, 1)
        # the classifier is drawn the same way whether or not a donor is given
        assert np.array_equal(net.classifier.data, fresh.classifier.data)
        # and the copy is independent of the donor
        net.layers[0][0].data[0, 0] += 1.0
        assert net.layers[0][0].data[0, 0] != donor.layers[0][0].data[0, 0]

    def test_classifier_differs_between_seeds(self):
        donor = npair.init(ARCH, 3, 0).backbone_arrays()
        a = npair.init(ARCH, 4, 1, backbone=donor)
        b = npair.init(ARCH, 4, 2, backbone=donor)
        assert not np.array_equal(a.classifier.data, b.classifier.data)

    def test_he_variance(self):
        arch = npair.Arch(50, (200,))
        w = npair.init(arch, 2, 7).layers[0][0].data
        assert w.size == 10_000
        assert abs(w.var() / (2.0 / 50) - 1.0) < 0.2
        assert not npair.init(arch, 2, 7).layers[0][1].data.any()

    def test_shape_validation(self):
        net = npair.init(ARCH, 4, 0)
        with pytest.raises(dm.ShapeError):
            npair.NetParams(ARCH, net.layers, dm.Tensor(np.zeros((4, 3))), 0.05)
        with pytest.raises(ValueError):
            npair.NetParams(ARCH, net.layers, net.classifier, 0.0)


class TestForward:
    def test_rows_sum_to_one(self):
        net = npair.init(ARCH, 4, 0)
        _, p = npair.forward(net, np.random.default_rng(0).normal(size=(7, 6)))
        np.testing.assert_allclose(p.data.sum(axis=1), 1.0, atol=1e-12)

    def test_feature_scale_invariance(self):
        net = npair.init(ARCH, 4, 0)
        f = npair.features(net, np.random.default_rng(1).normal(size=(5, 6)))
        a = npair.logits_from_features(net, f).data
        b = npair.logits_from_features(net, dm.scale(f, 3.7)).data
        np.testing.assert_allclose(a, b, rtol=1e-12)

    def test_zero_classifier_is_uniform(self):
        net = npair.init(ARCH, 4, 0)
        net.classifier.data[:] = 0.0
        p = npair.predict_proba(net, np.ones((3, 6)))
        np.testing.assert_allclose(p, 0.25)

    def test_temperature_scales_logits(self):
        net = npair.init(ARCH, 4, 0, temperature=0.5)
        f = npair.features(net, np.ones((2, 6)))
        z = npair.logits_from_features(net, f).data
        ref = (f.data / np.linalg.norm(f.data, axis=1, keepdims=True)) @ net.classifier.data.T / 0.5
        np.testing.assert_allclose(z, ref, rtol=1e-12)

    def test_dimension_mismatch(self):
        net = npair.init(ARCH, 4, 0)
        with pytest.raises(dm.ShapeError, match="6"):
            npair.forward(net, np.ones((2, 5)))

    def test_gradients_reach_every_parameter(self):
        net = npair.init(ARCH, 3, 0)
        _, p = npair.forward(net, np.random.default_rng(2).normal(size=(4, 6)))
        dm.total(dm.log(p)).backward()
        assert all(t.grad is not None and np.abs(t.grad).sum() > 0 for t in net.parameters())

    def test_relu(self):
        net = npair.init(npair.Arch(6, (8,), "relu"), 2, 0)
        f = npair.features(net, np.random.default_rng(3).normal(size=(4, 6))).data
        assert np.all(f >= 0)


class TestDual:
    def test_requires_same_arch(self):
        with pytest.raises(ValueError):
            npair.DualNet(npair.init(ARCH, 4, 0), npair.init(npair.Arch(6, (8, 4)), 4, 0))
        with pytest.raises(ValueError):
            npair.DualNet(npair.init(ARCH, 4, 0), npair.init(ARCH, 3, 0))

    def test_groups(self):
        dual = npair.DualNet(npair.init(ARCH, 4, 0), npair.init(ARCH, 4, 1))
        g = dual.groups()
        assert len(g["backbone"]) == 8 and len(g["classifier"]) == 2
        assert len(dual.parameters()) == 10

    def test_copy_is_deep(self):
        dual = npair.DualNet(npair.init(ARCH, 4, 0), npair.init(ARCH, 4, 1))
        twin = dual.copy()
        twin.theta_s.classifier.data[0, 0] += 1
        assert twin.theta_s.classifier.data[0, 0] != dual.theta_s.classifier.data[0, 0]


class TestCheckpoint:
    def test_dual_round_trip(self, tmp_path):
        dual = npair.DualNet(npair.init(ARCH, 4, 0), npair.init(ARCH, 4, 1, temperature=0.1))
        path = npair.save_checkpoint(tmp_path / "ck.json", dual, {"note": 1})
        back = npair.load_checkpoint(path)
        for a, b in zip(dual.parameters(), back.parameters()):
            assert a.data.tobytes() == b.data.tobytes()
        assert back.theta_t.temperature == 0.1
        assert back.theta_s.arch == ARCH

    def test_single_round_trip(self, tmp_path):
        net = npair.init(ARCH, 2, 5)
        back = npair.load_checkpoint(npair.save_checkpoint(tmp_path / "n.json", net))
        x = np.random.default_rng(4).normal(size=(3, 6))
        assert npair.predict_proba(net, x).tobytes() == npair.predict_proba(back, x).tobytes()

    def test_version_check(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text('{"version": 99, "kind": "single"}')
        with pytest.raises(ValueError, match="version"):
            npair.load_checkpoint(path)
