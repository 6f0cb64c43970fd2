"""Tests for C4.5 binning, bin indices and value multipliers."""

import math

import numpy as np
import pytest

from src.discretizer import (
    BinBoundaries,
    BinConfig,
    bin_index,
    bin_indices,
    boundaries_from_json,
    boundaries_to_json,
    bucket_regression_target,
    fit_bins,
    fit_table_bins,
    value_multiplier,
)
from src.errors import ConfigError, EmptyInput, LengthMismatch


def _entropy(labels):
    if len(labels) == 0:
        return 0.0
    _, counts = np.unique(labels, return_counts=True)
    p = counts / counts.sum()
    return float(-(p * np.log2(p)).sum())


def _best_midpoint(values, labels):
    """Exhaustive search over all midpoints between distinct sorted values."""
    order = np.argsort(values, kind="stable")
    xs, ys = values[order], labels[order]
    parent = _entropy(ys)
    best_gain, best_t = 0.0, None
    for i in range(1, len(xs)):
        if xs[i - 1] == xs[i]:
            continue
        gain = parent - (i * _entropy(ys[:i]) + (len(xs) - i) * _entropy(ys[i:])) / len(xs)
        if gain > best_gain + 1e-12:
            best_gain, best_t = gain, (xs[i - 1] + xs[i]) / 2
    return best_gain, best_t


class TestFitBins:
    def test_four_values(self):
        b = fit_bins([1, 2, 3, 4], [0, 0, 1, 1], BinConfig(min_leaf_size=1))
        assert b.interior == (2.5,)
        assert b.n_leaves == 2

    def test_constant_feature(self):
        b = fit_bins([5, 5, 5, 5], [0, 1, 0, 1], BinConfig(min_leaf_size=1))
        assert b.interior == ()
        assert b.n_leaves == 1

    def test_pure_labels_do_not_split(self):
        b = fit_bins(np.arange(100.0), np.zeros(100), BinConfig(min_leaf_size=1))
        assert b.n_leaves == 1

    def test_recovers_octile_boundaries(self):
        rng = np.random.default_rng(0)
        values = np.sort(rng.uniform(0.0, 1.0, 4096))
        labels = np.floor(values * 8).astype(int) % 2
        b = fit_bins(values, labels, BinConfig(n_bin=8, min_leaf_size=16))
        assert b.n_leaves == 8
        max_gap = np.diff(values).max()
        for j, edge in enumerate(b.interior, start=1):
            assert abs(edge - j / 8) <= max_gap

    def test_first_cut_matches_exhaustive_search(self):
        rng = np.random.default_rng(42)
        for _ in range(200):
            n = int(rng.integers(2, 30))
            values = rng.integers(0, 12, n).astype(float)
            labels = rng.integers(0, 2, n)
            gain, threshold = _best_midpoint(values, labels)
            b = fit_bins(values, labels, BinConfig(n_bin=2, min_leaf_size=1))
            if threshold is None:
                assert b.interior == ()
            else:
                assert b.interior == pytest.approx((threshold,))

    def test_adjacent_floats_keep_their_cut(self):
        up = math.nextafter(1.0, 2.0)
        values = [1.0, 1.0, up, up]
        b = fit_bins(values, [0, 0, 1, 1], BinConfig(min_leaf_size=1))
        assert b.interior == (up,)
        assert bin_indices(b, np.asarray(values)).tolist() == [0, 0, 1, 1]

    def test_leaf_budget_respected(self):
        rng = np.random.default_rng(1)
        values = rng.normal(size=2000)
        labels = rng.integers(0, 2, 2000)
        for n_bin in (2, 4, 16, 64):
            b = fit_bins(values, labels, BinConfig(n_bin=n_bin, min_leaf_size=1))
            assert 1 <= b.n_leaves <= n_bin

    def test_min_leaf_size_respected(self):
        rng = np.random.default_rng(2)
        values = rng.uniform(size=500)
        labels = (values > 0.3).astype(int) ^ (rng.random(500) < 0.2)
        b = fit_bins(values, labels, BinConfig(n_bin=32, min_leaf_size=20))
        counts = np.bincount(bin_indices(b, values), minlength=b.n_leaves)
        assert counts.min() >= 20

    def test_empty_input(self):
        with pytest.raises(EmptyInput):
            fit_bins([], [])

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            fit_bins([1.0, 2.0], [0])

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            BinConfig(n_bin=1)


class TestBinIndex:
    def test_half_open_intervals(self):
        b = BinBoundaries((2.5,), 1.0, 4.0)
        assert bin_index(b, 1.0) == 0
        assert bin_index(b, 2.5) == 1
        assert bin_index(b, 1e12) == 1

    def test_clamped_below(self):
        b = BinBoundaries((0.0, 1.0, 2.0), 0.0, 3.0)
        assert bin_index(b, -1e12) == 0

    def test_monotone_and_bounded(self):
        b = BinBoundaries((-1.0, 0.0, 0.5, 3.0), -2.0, 4.0)
        xs = np.linspace(-10, 10, 1001)
        ks = bin_indices(b, xs)
        assert np.all(np.diff(ks) >= 0)
        assert ks.min() == 0 and ks.max() == b.n_leaves - 1
        assert [bin_index(b, x) for x in xs[::50]] == ks[::50].tolist()

    def test_edges_must_increase(self):
        with pytest.raises(ConfigError):
            BinBoundaries((1.0, 1.0), 0.0, 2.0)

    def test_full_edges(self):
        assert BinBoundaries((2.5,), 1.0, 4.0).edges == [-math.inf, 2.5, math.inf]


class TestValueMultiplier:
    def test_endpoints(self):
        b = BinBoundaries((2.5,), 1.0, 4.0)
        assert value_multiplier(b, 1.0) == 0.5
        assert value_multiplier(b, 4.0) == 1.5
        assert value_multiplier(b, 2.5) == pytest.approx(1.0)

    def test_clamped(self):
        b = BinBoundaries((), 0.0, 10.0)
        assert value_multiplier(b, -5.0) == 0.5
        assert value_multiplier(b, 50.0) == 1.5

    def test_constant_feature(self):
        b = BinBoundaries((), 5.0, 5.0)
        assert value_multiplier(b, 5.0) == 1.0
        assert value_multiplier(b, -3.0) == 1.0


class TestTableBins:
    def test_regression_median_buckets(self):
        np.testing.assert_array_equal(bucket_regression_target([1.0, 2.0, 3.0, 4.0]), [0, 0, 1, 1])

    def test_fits_numerical_columns_only(self, mixed_dataset):
        bins = fit_table_bins(mixed_dataset, BinConfig(n_bin=8, min_leaf_size=2))
        assert set(bins) == {"blood pressure", "age"}
        # labels are bp > 130, so one cut near 130 separates them
        bp = bins["blood pressure"]
        assert any(abs(e - 130) < 5 for e in bp.interior)

    def test_json_round_trip(self, mixed_dataset):
        bins = fit_table_bins(mixed_dataset, BinConfig(n_bin=8, min_leaf_size=2))
        assert boundaries_from_json(boundaries_to_json(bins)) == bins
