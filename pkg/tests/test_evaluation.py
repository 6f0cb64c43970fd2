"""Tests for metrics, delta bucketing and magnitude geometry."""

import numpy as np
import pytest
import torch
from sklearn.metrics import roc_auc_score

from src.backbone import MagnitudeRegHead
from src.errors import ConfigError, EmptyInput, LengthMismatch, SingleClass, UnpairedDataset, ZeroNumerical
from src.evaluation import (
    DeltaBucket,
    MetricReport,
    alpha_stat,
    auc,
    calculate_metrics,
    delta_buckets,
    magnitude_geometry_report,
    plot_geometry,
    render_delta_table,
    report_delta,
    rmse,
)
from src.feature_encoder import EmbeddingTables
from src.table_store import ColumnSpec, FeatureKind, FeatureSchema, TargetSpec, TaskType


def _auc_reports(values, arm="base"):
    return [MetricReport(f"d{i}", TaskType.BINCLASS, "auc", v, arm=arm) for i, v in enumerate(values)]


def _schema(n_cat, n_num):
    cols = [ColumnSpec(f"c{i}", FeatureKind.CATEGORICAL, {"0": "a", "1": "b"}) for i in range(n_cat)]
    cols += [ColumnSpec(f"n{i}", FeatureKind.NUMERICAL) for i in range(n_num)]
    return FeatureSchema(cols, TargetSpec("y", TaskType.BINCLASS))


class TestAuc:
    def test_examples(self):
        assert auc([0.9, 0.8, 0.3], [1, 1, 0]) == 1.0
        assert auc([0.2, 0.8], [1, 0]) == 0.0
        assert auc([0.5, 0.5, 0.1], [1, 0, 0]) == pytest.approx(0.75)

    def test_matches_sklearn(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            n = int(rng.integers(4, 200))
            labels = rng.integers(0, 2, n)
            labels[:2] = [0, 1]
            scores = rng.integers(0, 10, n).astype(float)
            assert auc(scores, labels) == pytest.approx(roc_auc_score(labels, scores))

    def test_complement(self):
        rng = np.random.default_rng(1)
        scores = rng.normal(size=40)
        labels = np.arange(40) % 2
        assert auc(scores, labels) == pytest.approx(1.0 - auc(-scores, labels))

    def test_single_class(self):
        with pytest.raises(SingleClass):
            auc([0.1, 0.2], [1, 1])

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            auc([0.1, 0.2, 0.3], [1, 0])


class TestRmse:
    def test_examples(self):
        assert rmse([1.0, 2.0], [1.0, 2.0]) == 0.0
        assert rmse([0.0, 0.0], [3.0, 4.0]) == pytest.approx(np.sqrt(12.5))
        assert rmse([1.0], [4.0]) == 3.0

    def test_empty(self):
        with pytest.raises(EmptyInput):
            rmse([], [])

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            rmse([1.0], [1.0, 2.0])


class TestAlpha:
    def test_examples(self):
        assert alpha_stat(_schema(6, 6)) == 1.0
        assert alpha_stat(_schema(0, 4)) == 0.0

    def test_no_numerical(self):
        with pytest.raises(ZeroNumerical):
            alpha_stat(_schema(3, 0))


class TestDeltaBuckets:
    def test_band_counts(self):
        base = _auc_reports([0.8, 0.8, 0.8])
        variant = _auc_reports([0.802, 0.78, 0.74], arm="variant")
        b = delta_buckets(base, variant)
        assert (b.n_within, b.n_worse, b.n_better) == (1, 2, 0)
        assert b.avg_diff == pytest.approx(-0.04)
        assert b.avg_defined

    def test_all_unchanged(self):
        reports = _auc_reports([0.7, 0.9, 0.6])
        b = delta_buckets(reports, reports)
        assert (b.n_within, b.n_worse, b.n_better) == (3, 0, 0)
        assert b.avg_diff == 0.0 and not b.avg_defined

    def test_unpaired(self):
        with pytest.raises(UnpairedDataset):
            delta_buckets(_auc_reports([0.8, 0.7]), _auc_reports([0.8]))

    def test_counts_partition(self):
        rng = np.random.default_rng(3)
        base = _auc_reports(rng.uniform(0.5, 0.9, 30))
        variant = _auc_reports(rng.uniform(0.5, 0.9, 30))
        assert delta_buckets(base, variant).n_datasets == 30

    def test_rmse_delta_is_relative_and_flipped(self):
        base = MetricReport("r", TaskType.REGRESSION, "rmse", 2.0)
        better = MetricReport("r", TaskType.REGRESSION, "rmse", 1.8)
        assert report_delta(base, better) == pytest.approx(0.1)

    def test_render(self):
        table = render_delta_table({"value2str": DeltaBucket(1, 2, 0, -0.04)})
        assert table.splitlines()[1].split() == ["value2str", "1", "2", "0", "-4.00%"]
        undefined = render_delta_table({"vmfe": DeltaBucket(3, 0, 0, 0.0, avg_defined=False)})
        assert undefined.endswith("n/a")


class TestMetricReport:
    def test_round_trip(self):
        r = MetricReport("d", TaskType.REGRESSION, "rmse", 0.5, (64, 16, 20), seed=2, arm="random-init")
        assert MetricReport.from_dict(r.to_dict()) == r

    def test_auc_range(self):
        with pytest.raises(ConfigError):
            MetricReport("d", TaskType.BINCLASS, "auc", 1.5)

    def test_calculate_metrics(self):
        stats = calculate_metrics(_auc_reports([0.6, 0.8]))
        assert stats["mean"] == pytest.approx(0.7)
        assert stats["num_evaluated"] == 2


class TestGeometry:
    @staticmethod
    def _tables(n_bin=16):
        return EmbeddingTables(n_word_ids=5, n_bin=n_bin, d=4, max_name_len=2)

    def test_perfect_monotone(self):
        tables = self._tables()
        with torch.no_grad():
            tables.magnitude_table.zero_()
            tables.magnitude_table[:16, 0] = torch.arange(16) / 16
        report = magnitude_geometry_report(tables, None, sample_pairs=500)
        assert report.spearman == pytest.approx(1.0)
        assert not report.degenerate
        for a, b, d in report.pairs[:20]:
            assert a != b
            assert d == pytest.approx(abs(a - b) / 16, abs=1e-6)

    def test_constant_rows(self):
        tables = self._tables()
        with torch.no_grad():
            tables.magnitude_table.fill_(0.3)
        report = magnitude_geometry_report(tables, MagnitudeRegHead(4), sample_pairs=100)
        assert report.degenerate and report.spearman == 0.0

    def test_random_table_has_no_geometry(self):
        for seed in range(5):
            torch.manual_seed(seed)
            tables = EmbeddingTables(n_word_ids=5, n_bin=64, d=32, max_name_len=2)
            report = magnitude_geometry_report(tables, None, sample_pairs=1000, seed=seed)
            assert abs(report.spearman) < 0.2, seed

    def test_too_few_pairs(self):
        with pytest.raises(ConfigError):
            magnitude_geometry_report(self._tables(), None, sample_pairs=5)

    def test_plot(self, tmp_path):
        report = magnitude_geometry_report(self._tables(), None, sample_pairs=50)
        plot_geometry(report, tmp_path / "geometry.png", n_bin=16)
        assert (tmp_path / "geometry.png").stat().st_size > 0
