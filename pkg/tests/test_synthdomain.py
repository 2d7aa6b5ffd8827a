import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cct import synthdomain as sd


def configs():
    return st.integers(1, 40).flatmap(
        lambda t: st.tuples(st.just(t), st.integers(0, t)).flatmap(
            lambda ts: st.tuples(st.just(ts[0]), st.just(ts[1]), st.integers(ts[0] - ts[1], ts[0]))
        )
    )


class TestLabelSets:
    # total, source count, target count, expected common size
    BENCHMARK_SPLITS = [(126, 80, 96, 50), (65, 43, 35, 13), (31, 25, 25, 19)]

    @pytest.mark.parametrize("total,s,t,common", BENCHMARK_SPLITS)
    def test_benchmark_splits(self, total, s, t, common):
        cfg = sd.LabelSetConfig(total, s, t)
        assert len(cfg.common_classes) == common
        assert sd.commonness(cfg) == common / total

    def test_rounded_commonness(self):
        rounded = [0.4, 0.2, 0.6]
        for (total, s, t, _), r in zip(self.BENCHMARK_SPLITS, rounded):
            assert abs(sd.commonness(sd.LabelSetConfig(total, s, t)) - r) < 0.02

    def test_reference_benchmark(self):
        cfg = sd.LabelSetConfig(12, 8, 8)
        assert cfg.common_classes == [4, 5, 6, 7]
        assert cfg.source_private == [0, 1, 2, 3]
        assert cfg.target_private == [8, 9, 10, 11]
        assert list(cfg.to_local([4, 11])) == [0, 7]
        assert list(cfg.to_global([0, 7])) == [4, 11]

    @settings(max_examples=100, deadline=None)
    @given(configs())
    def test_partition(self, triple):
        cfg = sd.LabelSetConfig(*triple)
        parts = cfg.common_classes + cfg.source_private + cfg.target_private
        assert len(parts) == len(set(parts)) == len(set(cfg.source_classes) | set(cfg.target_classes))
        assert all(cfg.is_common(c) == (c in cfg.common_classes) for c in range(cfg.total_classes))

    @settings(max_examples=100, deadline=None)
    @given(configs())
    def test_commonness_symmetric_and_bounded(self, triple):
        total, s, t = triple
        a = sd.commonness(sd.LabelSetConfig(total, s, t))
        b = sd.commonness(sd.LabelSetConfig(total, t, s))
        assert a == b
        assert 0.0 <= a <= 1.0
        assert (a == 1.0) == (s == t == total)
        assert (a == 0.0) == (s + t == total)

    def test_empty_union(self):
        with pytest.raises(ValueError):
            sd.commonness(sd.LabelSetConfig(0, 0, 0))

    @pytest.mark.parametrize("args", [(5, 6, 2), (5, 2, 6), (5, 1, 1), (5, -1, 5)])
    def test_invalid(self, args):
        with pytest.raises(ValueError):
            sd.LabelSetConfig(*args)

    def test_from_common(self):
        cfg = sd.LabelSetConfig.from_common(4, 2, 6)
        assert (cfg.total_classes, cfg.source_count, cfg.target_count) == (12, 6, 10)
        assert len(cfg.common_classes) == 4


class TestSplit:
    def test_counts(self):
        y = np.repeat(np.arange(7), 10)
        lab, unl = sd.split_nshot(y, 3, 0)
        assert len(lab) == 21

    def test_office_home_shape(self):
        y = np.repeat(np.arange(35), 8)
        lab, _ = sd.split_nshot(y, 5, 1)
        assert len(lab) == 175

    @settings(max_examples=50, deadline=None)
    @given(st.integers(1, 8), st.integers(1, 5), st.integers(0, 4), st.integers(0, 2**32 - 1))
    def test_partition(self, classes, k, extra, seed):
        y = np.repeat(np.arange(classes), k + 1 + extra)
        lab, unl = sd.split_nshot(y, k, seed)
        assert len(np.intersect1d(lab, unl)) == 0
        assert sorted(np.concatenate([lab, unl]).tolist()) == list(range(len(y)))
        assert np.all(np.bincount(y[lab], minlength=classes) == k)

    def test_too_small_class_is_named(self):
        y = np.array([0, 0, 0, 0, 1, 1, 1])
        with pytest.raises(ValueError, match="class 1"):
            sd.split_nshot(y, 3, 0)

    def test_seeded(self):
        y = np.repeat(np.arange(4), 6)
        a, _ = sd.split_nshot(y, 2, 9)
        b, _ = sd.split_nshot(y, 2, 9)
        assert np.array_equal(a, b)


class TestAugment:
    def test_identity(self):
        x = np.random.default_rng(0).normal(size=(5, 4))
        cfg = sd.AugmentConfig(0.0, 0.0, 0.0)
        rng = np.random.default_rng(1)
        assert np.array_equal(sd.augment(x, "weak", cfg, rng), x)
        assert np.array_equal(sd.augment(x, "strong", cfg, rng), x)

    def test_weak_norm_matches_chi_mean(self):
        # E||N(0, s^2 I_64)|| = s * sqrt(2) * Gamma(32.5) / Gamma(32), close to 0.8 for s = 0.1
        cfg = sd.AugmentConfig(weak_sigma=0.1, strong_sigma=0.1, strong_dropout=0.0)
        x = np.zeros((10_000, 64))
        norms = np.linalg.norm(sd.augment(x, "weak", cfg, np.random.default_rng(2)), axis=1)
        exact = 0.1 * math.sqrt(2) * math.exp(math.lgamma(32.5) - math.lgamma(32))
        assert abs(norms.mean() - 0.8) < 0.05 * 0.8
        assert abs(norms.mean() - exact) < 0.01 * exact

    def test_strong_perturbs_more(self):
        cfg = sd.AugmentConfig(0.05, 0.2, 0.1)
        rng = np.random.default_rng(3)
        x = rng.normal(size=(10_000, 16))
        weak = np.linalg.norm(sd.augment(x, "weak", cfg, rng) - x, axis=1).mean()
        strong = np.linalg.norm(sd.augment(x, "strong", cfg, rng) - x, axis=1).mean()
        assert strong > weak

    def test_pure_function_of_rng_state(self):
        cfg = sd.AugmentConfig()
        x = np.ones((3, 4))
        a = sd.augment(x, "strong", cfg, np.random.default_rng(4))
        b = sd.augment(x, "strong", cfg, np.random.default_rng(4))
        assert np.array_equal(a, b)

    def test_validation(self):
        with pytest.raises(ValueError):
            sd.AugmentConfig(weak_sigma=0.3, strong_sigma=0.2)
        with pytest.raises(ValueError):
            sd.AugmentConfig(strong_dropout=1.0)
        with pytest.raises(ValueError):
            sd.augment(np.ones(2), "medium", sd.AugmentConfig(), np.random.default_rng(0))

    def test_for_spread(self):
        cfg = sd.AugmentConfig.for_spread(2.0)
        assert (cfg.weak_sigma, cfg.strong_sigma) == (0.1, 0.4)


class TestGenerate:
    CFG = sd.LabelSetConfig(12, 8, 8)

    def test_deterministic(self):
        a = sd.generate(self.CFG, per_class=30, seed=5, shift_angle=0.3)
        b = sd.generate(self.CFG, per_class=30, seed=5, shift_angle=0.3)
        for name in ("source_x", "target_labeled_x", "target_unlabeled_x", "target_unlabeled_y"):
            assert getattr(a, name).tobytes() == getattr(b, name).tobytes()

    def test_seed_changes_data(self):
        a = sd.generate(self.CFG, per_class=30, seed=5)
        b = sd.generate(self.CFG, per_class=30, seed=6)
        assert not np.array_equal(a.source_x, b.source_x)

    def test_shapes_and_labels(self):
        pair = sd.generate(self.CFG, dim=10, per_class=40, shots=3, seed=0, source_test_per_class=5)
        assert pair.source_x.shape == (8 * 40, 10)
        assert set(pair.source_y) == set(range(8))
        assert set(pair.target_unlabeled_y) == set(range(4, 12))
        assert np.all(np.bincount(pair.target_labeled_y - 4) == 3)
        assert pair.shots == 3 and pair.dim == 10
        assert len(pair.source_test_y) == 40
        assert len(pair.target_labeled_y) <= len(pair.target_unlabeled_y) / 5

    def test_too_few_unlabeled(self):
        with pytest.raises(ValueError, match="fifth"):
            sd.generate(self.CFG, per_class=10, shots=3)

    @pytest.mark.parametrize("angle", [0.0, math.pi / 6])
    def test_target_means(self, angle):
        m, spread = 500, 0.5
        offset = np.zeros(8) if angle == 0 else np.linspace(-1, 1, 8)
        pair = sd.generate(
            sd.LabelSetConfig(3, 3, 3), dim=8, per_class=m, shift_angle=angle, shift_offset=offset,
            spread=spread, seed=11, shots=1,
        )
        x, y = pair.target_all()
        expected = pair.prototypes @ pair.shift.matrix(8).T + offset
        if angle == 0:
            expected_src = pair.prototypes
            np.testing.assert_allclose(expected, expected_src)
        bound = 3 * spread / math.sqrt(m)
        for c in range(3):
            dev = x[y == c].mean(axis=0) - expected[c]
            assert np.all(np.abs(dev) < bound), (c, dev)

    def test_rotation_is_in_first_plane(self):
        s = sd.Shift(math.pi / 2, np.zeros(4))
        a = s.matrix(4)
        np.testing.assert_allclose(a @ [1, 0, 0, 0], [0, 1, 0, 0], atol=1e-15)
        np.testing.assert_allclose(a[2:, 2:], np.eye(2))
        np.testing.assert_allclose(a @ a.T, np.eye(4), atol=1e-15)

    def test_csv_round_trip(self, tmp_path):
        pair = sd.generate(self.CFG, per_class=30, seed=1)
        paths = sd.dump_csv(pair, tmp_path)
        x, y = sd.read_matrix_csv(paths["source"])
        assert x.tobytes() == pair.source_x.tobytes()
        assert np.array_equal(y, pair.source_y)
        _, yu = sd.read_matrix_csv(paths["target_unlabeled"])
        assert np.all(yu == -1)
        header = paths["source"].read_text().splitlines()[0]
        assert header.startswith("id,y,x0,x1")


def test_make_rng_is_pcg64():
    assert isinstance(sd.make_rng(0).bit_generator, np.random.PCG64)
    assert sd.make_rng(3).random() == sd.make_rng(3).random()
