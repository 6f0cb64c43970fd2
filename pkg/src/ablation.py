"""
Ablation - Encoding variants compared against the default configuration

Flags (combine with "+", e.g. "vmfe+no-ifa"):
    value2str   numerical values written out as text and tokenized as words
    vmfe        value row = mean name embedding x value multiplier
    no-ifa      all name and value tokens fed to the encoder directly
    nbin=K      K magnitude tokens instead of the configured count
    valpos      position embeddings also added to the IFA value projection
    noreg       no triplet regularizer during pre-training

run_ablation trains the default configuration and each variant on the same
splits and seeds, and buckets the per-dataset metric changes.
"""

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np

from .errors import ConfigError
from .evaluation import DeltaBucket, MetricReport, delta_buckets, render_delta_table
from .helpers import JsonlLogger, save_json
from .model import AblationConfig, NumericEncoding
from .table_store import Dataset, SplitSpec, split
from .training_engine import FinetuneConfig, PretrainConfig, finetune, pretrain

DEFAULT_VARIANTS = ("value2str", "vmfe", "no-ifa", "nbin=32", "nbin=128", "valpos")


def parse_ablation(flags: Union[str, Sequence[str]], base: Optional[AblationConfig] = None) -> AblationConfig:
    """
    Turn ablation flags into an AblationConfig.

    Examples:
        >>> parse_ablation("vmfe+nbin=32").tag
        'vmfe+nbin=32'

    Raises:
        ConfigError: On an unknown flag or two numeric encodings at once
    """
    if isinstance(flags, str):
        flags = [f for f in flags.split("+") if f]
    cfg = replace(base or AblationConfig())
    encodings = set()
    for flag in flags:
        flag = flag.strip().lower()
        if flag in ("value2str", "vmfe"):
            encodings.add(flag)
            cfg.numeric_encoding = NumericEncoding(flag)
        elif flag == "no-ifa":
            cfg.use_ifa = False
        elif flag == "valpos":
            cfg.value_position_encoding = True
        elif flag == "noreg":
            cfg.use_triplet_reg = False
        elif flag.startswith("nbin="):
            try:
                cfg.n_bin = int(flag.split("=", 1)[1])
            except ValueError as e:
                raise ConfigError(f"Bad magnitude-token count in '{flag}'") from e
            if cfg.n_bin < 2:
                raise ConfigError(f"nbin must be >= 2, got {cfg.n_bin}")
        else:
            raise ConfigError(f"Unknown ablation flag '{flag}'")
    if len(encodings) > 1:
        raise ConfigError("value2str and vmfe are mutually exclusive")
    return cfg


@dataclass
class AblationRun:
    tag: str
    reports: List[MetricReport] = field(default_factory=list)
    steps: int = 0
    seconds: float = 0.0

    @property
    def seconds_per_step(self) -> float:
        return self.seconds / self.steps if self.steps else 0.0

    def to_dict(self) -> Dict:
        return {"tag": self.tag, "reports": [r.to_dict() for r in self.reports],
                "steps": self.steps, "seconds": self.seconds, "seconds_per_step": self.seconds_per_step}


def _run_variant(ablation: AblationConfig, datasets: List[Dataset], ft_cfg: FinetuneConfig,
                 pretrain_datasets: Optional[List[Dataset]], pt_cfg: Optional[PretrainConfig],
                 verbose: bool) -> AblationRun:
    model_cfg = replace(ft_cfg.model, ablation=ablation)
    checkpoint = None
    if pretrain_datasets:
        checkpoint = pretrain(pretrain_datasets, replace(pt_cfg or PretrainConfig(), model=model_cfg), verbose=verbose)

    run = AblationRun(tag=ablation.tag)
    cfg = replace(ft_cfg, model=model_cfg)
    for ds in datasets:
        log = JsonlLogger(None)
        splits = split(ds, SplitSpec(ratios=cfg.split_ratios, seed=cfg.seed))
        _, report = finetune(splits, cfg, checkpoint=checkpoint, log=log, verbose=verbose)
        report.arm = ablation.tag
        run.reports.append(report)
        epochs = [r for r in log.records if r["type"] == "finetune_epoch"]
        run.steps += sum(r["steps"] for r in epochs)
        run.seconds += sum(r["seconds"] for r in epochs)
    return run


def run_ablation(datasets: List[Dataset], variants: Sequence[str] = DEFAULT_VARIANTS,
                 ft_cfg: Optional[FinetuneConfig] = None, pretrain_datasets: Optional[List[Dataset]] = None,
                 pt_cfg: Optional[PretrainConfig] = None, run_dir: Optional[Union[str, Path]] = None,
                 verbose: bool = True) -> Dict:
    """
    Compare ablation variants against the default configuration.

    Args:
        datasets: Downstream datasets, each split with ft_cfg's ratios and seed
        variants: Ablation flag strings, one per variant
        ft_cfg: Fine-tuning configuration shared by every run
        pretrain_datasets: When given, every configuration is pre-trained on
            these first and fine-tuned from its own checkpoint
        pt_cfg: Pre-training configuration
        run_dir: Optional directory for report.json and delta_table.txt
        verbose: Print progress

    Returns:
        Dict with "runs" (tag -> AblationRun), "buckets" (tag -> DeltaBucket)
        and the rendered "table"
    """
    ft_cfg = ft_cfg or FinetuneConfig()
    base_ablation = replace(ft_cfg.model.ablation)
    configs = [base_ablation] + [parse_ablation(v, base_ablation) for v in variants]

    runs: Dict[str, AblationRun] = {}
    for ablation in configs:
        if verbose:
            print(f"\n🔍 Ablation run: {ablation.tag}")
        runs[ablation.tag] = _run_variant(ablation, datasets, ft_cfg, pretrain_datasets, pt_cfg, verbose)

    base = runs[base_ablation.tag]
    buckets: Dict[str, DeltaBucket] = {
        tag: delta_buckets(base.reports, run.reports) for tag, run in runs.items() if tag != base.tag
    }
    table = render_delta_table(buckets)
    if verbose:
        print("\n" + table)
        for tag, run in runs.items():
            print(f"   {tag}: {1000 * run.seconds_per_step:.2f} ms/step, "
                  f"mean {run.reports[0].metric} {np.mean([r.value for r in run.reports]):.4f}")

    if run_dir:
        run_dir = Path(run_dir)
        save_json({"runs": {t: r.to_dict() for t, r in runs.items()},
                   "buckets": {t: b.to_dict() for t, b in buckets.items()}},
                  run_dir / "report.json", quiet=not verbose)
        (run_dir / "delta_table.txt").write_text(table + "\n", encoding="utf-8")
    return {"runs": runs, "buckets": buckets, "table": table}
