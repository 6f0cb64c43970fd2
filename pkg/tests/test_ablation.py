"""Tests for ablation flags and the ablation runner."""

import pytest

from src.ablation import parse_ablation, run_ablation
from src.discretizer import BinConfig
from src.errors import ConfigError
from src.model import AblationConfig, ModelConfig, NumericEncoding
from src.synthetic import SyntheticTaskSpec, gen_synthetic
from src.training_engine import FinetuneConfig

MODEL = ModelConfig(d=8, n_heads=2, n_layers=1, d_ff=16, dropout=0.0, head_dropout=0.0,
                    max_name_len=4, max_value_len=3, max_words=64,
                    bin=BinConfig(n_bin=8, min_leaf_size=2))


class TestParseAblation:
    def test_combined_flags(self):
        cfg = parse_ablation("vmfe+nbin=32")
        assert cfg.numeric_encoding == NumericEncoding.VMFE
        assert cfg.n_bin == 32
        assert cfg.tag == "vmfe+nbin=32"

    def test_list_of_flags(self):
        cfg = parse_ablation(["no-ifa", "valpos", "noreg"])
        assert (cfg.use_ifa, cfg.value_position_encoding, cfg.use_triplet_reg) == (False, True, False)

    def test_empty_is_default(self):
        assert parse_ablation("") == AblationConfig()

    @pytest.mark.parametrize("flags", ["bogus", "nbin=x", "nbin=1", "value2str+vmfe"])
    def test_rejected(self, flags):
        with pytest.raises(ConfigError):
            parse_ablation(flags)

    def test_base_not_mutated(self):
        base = AblationConfig()
        parse_ablation("no-ifa", base)
        assert base.use_ifa


def test_run_ablation_buckets(tmp_path):
    datasets = [gen_synthetic(SyntheticTaskSpec(n_rows=100, n_num_features=2, n_cat_features=1, seed=s))
                for s in (1, 2)]
    cfg = FinetuneConfig(max_epochs=1, batch_size=32, lr=1e-3, model=MODEL)
    result = run_ablation(datasets, ["vmfe", "no-ifa+nbin=4"], cfg, run_dir=tmp_path, verbose=False)

    assert set(result["runs"]) == {"default", "vmfe", "no-ifa+nbin=4"}
    assert set(result["buckets"]) == {"vmfe", "no-ifa+nbin=4"}
    for bucket in result["buckets"].values():
        assert bucket.n_datasets == 2
    for run in result["runs"].values():
        assert len(run.reports) == 2 and run.steps > 0
    assert result["runs"]["vmfe"].reports[0].arm == "vmfe"
    assert (tmp_path / "delta_table.txt").read_text(encoding="utf-8").startswith("Variant")
    assert (tmp_path / "report.json").exists()


@pytest.mark.slow
def test_all_variants_end_to_end_and_no_ifa_costs_more(tmp_path):
    model = ModelConfig(d=32, n_heads=4, n_layers=2, d_ff=64, max_name_len=8, max_value_len=6,
                        max_words=1024, bin=BinConfig(n_bin=64, min_leaf_size=8))
    ds = gen_synthetic(SyntheticTaskSpec(n_rows=512, n_num_features=4, n_cat_features=2, seed=5))
    cfg = FinetuneConfig(max_epochs=5, batch_size=64, lr=1e-3, patience=5, model=model)
    variants = ["value2str", "vmfe", "no-ifa", "nbin=32", "nbin=128", "valpos"]
    result = run_ablation([ds], variants, cfg, run_dir=tmp_path, verbose=False)
    assert set(result["buckets"]) == set(variants)
    for bucket in result["buckets"].values():
        assert bucket.n_datasets == 1
    runs = result["runs"]
    assert runs["no-ifa"].seconds_per_step > runs["default"].seconds_per_step
