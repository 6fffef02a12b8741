import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fedadp.data import partition_iid, subset_split, synth_gaussian_blobs
from fedadp.errors import DimensionError, UsageError
from fedadp.importance import (ImportanceMap, probe_magnitude, read_csv, select_tiers,
                               sensitivity_fi, sensitivity_fi_reference, variance_fi, write_csv)
from fedadp.mechanism import PrivacyParams, uplink_sigma
from fedadp.nn import HyperParams, ModelParams, clip_params, init_params, local_train, train_sgd

from conftest import needs_mnist, random_params

SQRT_2_OVER_PI = 0.7978845608028653558798921198687637  # mpmath, 40 digits


def trained_blob_model(seed, epochs=1):
    ds = synth_gaussian_blobs(8, 2, 1200, seed, informative=(0, 1))
    train, _ = subset_split(ds, 1200, 0.2, seed)
    g = clip_params(init_params([8, 32, 2], np.random.default_rng(seed)), 5.0)
    hp = HyperParams(local_epochs=epochs, hidden=32)
    return g, local_train(g, train.inputs, train.labels, hp, np.random.default_rng(seed)), train


class TestProbe:
    def test_values(self):
        assert probe_magnitude(0.0) == 0.0
        assert probe_magnitude(1.0) == pytest.approx(SQRT_2_OVER_PI, rel=1e-15)
        assert probe_magnitude(2 * 0.37) == 2 * probe_magnitude(0.37)

    def test_negative(self):
        with pytest.raises(UsageError):
            probe_magnitude(-1.0)


class TestSensitivity:
    def test_zero_column_scores_zero(self, rng):
        params = random_params([6, 5, 3], rng)
        x = rng.random((40, 6))
        x[:, 2] = 0.0
        fi = sensitivity_fi(params, x, rng.integers(0, 3, 40), 5.0)
        assert fi.scores[2] == 0.0
        assert fi.scores.max() > 0

    def test_tiny_probe_scores_nothing(self, rng):
        params = random_params([6, 5, 3], rng)
        x, y = rng.random((40, 6)), rng.integers(0, 3, 40)
        ref = sensitivity_fi_reference(params, x, y, 1e-12)
        assert np.all(ref.scores == 0)
        assert np.all(sensitivity_fi(params, x, y, 1e-12).scores == 0)

    def test_fast_path_matches_literal_probe(self):
        nonzero = 0
        for seed in range(8):
            rng = np.random.default_rng(seed)
            params = random_params([12, 7, 4], rng)
            x = rng.random((200, 12)) * (rng.random((200, 12)) < 0.6)
            y = rng.integers(0, 4, 200)
            fast = sensitivity_fi(params, x, y, 2.0)
            slow = sensitivity_fi_reference(params, x, y, 2.0)
            np.testing.assert_allclose(fast.scores, slow.scores, atol=1e-12)
            nonzero += int(np.count_nonzero(fast.scores))
        assert nonzero > 10

    def test_model_left_unchanged(self, rng):
        params = random_params([6, 5, 3], rng)
        before = params.copy()
        x, y = rng.random((30, 6)), rng.integers(0, 3, 30)
        sensitivity_fi(params, x, y, 0.5)
        sensitivity_fi_reference(params, x, y, 0.5)
        assert params.equals(before)

    def test_informative_features_rank_higher(self):
        _, model, train = trained_blob_model(0)
        privacy = PrivacyParams(epsilon=0.5, clip=5.0, min_shard=len(train))
        fi = sensitivity_fi(model, train.inputs, train.labels, probe_magnitude(uplink_sigma(privacy)))
        assert fi.scores[:2].mean() > fi.scores[2:].mean()

    def test_bad_probe(self, rng):
        with pytest.raises(UsageError):
            sensitivity_fi(random_params([3, 2, 2], rng), rng.random((4, 3)), np.zeros(4, dtype=int), 0.0)


class TestVariance:
    def test_identical_models(self, small_params):
        assert np.all(variance_fi(small_params, small_params).scores == 0)

    def test_single_weight(self):
        local = ModelParams(((np.array([[2.0]]), np.zeros(1)), (np.ones((1, 2)), np.zeros(2))))
        prev = ModelParams(((np.array([[0.0]]), np.zeros(1)), (np.ones((1, 2)), np.zeros(2))))
        assert variance_fi(local, prev).scores[0] == 2.0

    def test_informative_features_rank_higher(self):
        g, model, _ = trained_blob_model(1, epochs=1)
        fi = variance_fi(model, g)
        assert fi.scores[:2].mean() > fi.scores[2:].mean()

    def test_scaling_is_cubic(self, rng):
        a, b = random_params([5, 4, 3], rng), random_params([5, 4, 3], rng)
        scaled = lambda p: ModelParams(((2.0 * p.layers[0][0], p.layers[0][1]),) + p.layers[1:])
        # powers of two scale without rounding, so equality is exact
        np.testing.assert_array_equal(variance_fi(scaled(a), scaled(b)).scores, 8.0 * variance_fi(a, b).scores)

    def test_hidden_permutation_invariance(self, rng):
        a, b = random_params([5, 6, 3], rng), random_params([5, 6, 3], rng)
        perm = rng.permutation(6)
        permute = lambda p: ModelParams(((p.layers[0][0][:, perm], p.layers[0][1][perm]),
                                         (p.layers[1][0][perm], p.layers[1][1])))
        np.testing.assert_allclose(variance_fi(permute(a), permute(b)).scores,
                                   variance_fi(a, b).scores, rtol=1e-14)

    def test_shape_mismatch(self, rng):
        with pytest.raises(DimensionError):
            variance_fi(random_params([5, 4, 3], rng), random_params([5, 3, 3], rng))


class TestSelectTiers:
    def test_full_fraction(self):
        assert list(select_tiers(np.array([0.3, 0.1, 0.2]), 1.0, "lowest")) == [0, 1, 2]

    def test_lowest_half(self):
        assert set(select_tiers(np.array([3.0, 1.0, 2.0, 0.0]), 0.5, "lowest")) == {3, 1}

    def test_ties_prefer_low_index(self):
        s = np.array([1.0, 0.0, 0.0, 0.0, 2.0, 2.0])
        assert list(select_tiers(s, 0.34, "lowest")) == [1, 2]
        assert list(select_tiers(s, 0.34, "highest")) == [4, 5]
        assert list(select_tiers(np.zeros(6), 0.5, "highest")) == [0, 1, 2]

    def test_mnist_fraction(self):
        assert len(select_tiers(np.arange(784.0), 0.2, "lowest")) == 156

    @settings(max_examples=100, deadline=None)
    @given(m=st.integers(2, 300), data=st.data())
    def test_complementary_tiers_partition(self, m, data):
        k = data.draw(st.integers(1, m - 1))
        scores = np.random.default_rng(m * 1000 + k).permutation(m).astype(float)
        low = select_tiers(scores, k / m, "lowest")
        high = select_tiers(scores, 1 - k / m, "highest")
        assert len(low) + len(high) == m
        assert sorted(np.concatenate([low, high])) == list(range(m))

    def test_bad_arguments(self):
        with pytest.raises(UsageError):
            select_tiers(np.ones(4), 0.0, "lowest")
        with pytest.raises(UsageError):
            select_tiers(np.ones(4), 0.5, "middle")


def test_map_validation():
    with pytest.raises(UsageError):
        ImportanceMap(np.array([1.0, -0.5]))
    with pytest.raises(UsageError):
        ImportanceMap(np.array([np.nan]))


def test_csv_round_trip(tmp_path, rng):
    fi = ImportanceMap(rng.random(17) / 3)
    write_csv(fi, tmp_path / "fi.csv")
    np.testing.assert_array_equal(read_csv(tmp_path / "fi.csv").scores, fi.scores)


@needs_mnist
def test_mnist_lowest_tier_is_blank_pixels(mnist):
    ds = mnist.subset(np.arange(33600))
    shard = partition_iid(len(ds), 30, 0).shards[0]
    x, y = ds.inputs[shard], ds.labels[shard]
    g = init_params([784, 256, 10], np.random.default_rng(0))
    # importance is taken from the trained weights before the clip
    trained = train_sgd(g, x, y, HyperParams(), np.random.default_rng(0))
    blank = np.flatnonzero(~x.any(axis=0))
    assert len(blank) >= 0.2 * 784

    v = variance_fi(trained, g)
    assert np.all(v.scores[blank] == 0)
    chosen = select_tiers(v, 0.2, "lowest")
    assert len(np.intersect1d(blank, chosen)) / len(chosen) >= 0.8

    # accuracy is a step function: many lit pixels also score exactly zero,
    # so the sensitivity tier is "zero-score pixels", blank ones included
    fi = sensitivity_fi(trained, x, y, probe_magnitude(0.0555))
    assert np.all(fi.scores[blank] == 0)
    assert np.all(fi.scores[select_tiers(fi, 0.2, "lowest")] == 0)
