#!/usr/bin/env python3
"""
CLI - Command-line entry point for tabtok

Usage:
    python -m src.cli gen-synthetic --out data/tasks/task0.csv --seed 0
    python -m src.cli pretrain --data data/tasks/task*.csv --epochs 5
    python -m src.cli finetune --data heldout.csv --checkpoint runs/pretrain-.../checkpoint
    python -m src.cli evaluate --data heldout.csv --checkpoint runs/finetune-.../checkpoint
    python -m src.cli ablate --data heldout.csv --ablate value2str --ablate no-ifa
    python -m src.cli inspect-embeddings --checkpoint runs/pretrain-.../checkpoint --plot
    python -m src.cli transfer --data task0.csv task1.csv --target heldout.csv --seeds 5
    python -m src.cli stats --data heldout.csv

Every CSV is read with the schema given by --schema or, failing that, the
sidecar file <stem>.schema.json next to it. Outputs land in a fresh run
directory under TABTOK_RUN_DIR (default ./runs).

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric failure.
"""

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from .ablation import DEFAULT_VARIANTS, parse_ablation, run_ablation
from .checkpoint import load_checkpoint
from .errors import ConfigError, TabTokError
from .evaluation import (
    DeltaBucket,
    compare_arms,
    delta_buckets,
    magnitude_geometry_report,
    plot_geometry,
    render_delta_table,
)
from .helpers import load_json, make_run_dir, save_json
from .synthetic import SyntheticTaskSpec, gen_synthetic
from .table_store import Dataset, SplitSpec, dataset_stats, load_csv, load_schema, save_csv, save_schema, split
from .training_engine import FinetuneConfig, PretrainConfig, evaluate, finetune, pretrain


def sidecar_schema_path(csv_path: Path) -> Path:
    return csv_path.with_name(f"{csv_path.stem}.schema.json")


def load_table(csv_path: str, schema_path: Optional[str] = None, quiet: bool = False) -> Dataset:
    """Load a CSV with an explicit schema or its sidecar."""
    csv_path = Path(csv_path)
    return load_csv(csv_path, load_schema(schema_path or sidecar_schema_path(csv_path)), quiet=quiet)


def _load_config_json(path) -> Dict:
    try:
        return load_json(path)
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise ConfigError(f"Config file {path} is not valid JSON: {e}") from e


def _config_dict(args) -> Dict:
    return _load_config_json(args.config) if args.config else {}


def _apply_common(data: Dict, args) -> Dict:
    if args.seed is not None:
        data["seed"] = args.seed
    if args.deterministic:
        data["deterministic"] = True
    return data


def _with_ablation(cfg, flags: Optional[List[str]]):
    if not flags:
        return cfg
    ablation = parse_ablation([f for flag in flags for f in flag.split("+")], cfg.model.ablation)
    return replace(cfg, model=replace(cfg.model, ablation=ablation))


def build_pretrain_config(args) -> PretrainConfig:
    data = _apply_common(_config_dict(args), args)
    if args.task:
        data["task_mode"] = args.task
    if args.epochs is not None:
        data["epochs"] = args.epochs
    return _with_ablation(PretrainConfig.from_dict(data), args.ablate)


def build_finetune_config(args) -> FinetuneConfig:
    data = _apply_common(_config_dict(args), args)
    if getattr(args, "epochs", None) is not None:
        data["max_epochs"] = args.epochs
    if getattr(args, "lr", None) is not None:
        data["lr"] = args.lr
    return _with_ablation(FinetuneConfig.from_dict(data), getattr(args, "ablate", None))


# ---------------------------------------------------------------------------
# Verbs
# ---------------------------------------------------------------------------

def cmd_pretrain(args) -> int:
    cfg = build_pretrain_config(args)
    datasets = [load_table(p, args.schema) for p in args.data]
    run_dir = make_run_dir("pretrain", args.run_dir)
    ckpt = pretrain(datasets, cfg, run_dir=run_dir)
    save_json({"best_val_loss": ckpt.best_val_loss, "best_epoch": ckpt.epoch, "steps": ckpt.step,
               "heads": [h["id"] for h in ckpt.heads]}, run_dir / "report.json")
    print(f"✅ Run directory: {run_dir}")
    return 0


def cmd_finetune(args) -> int:
    cfg = build_finetune_config(args)
    ds = load_table(args.data, args.schema)
    run_dir = make_run_dir("finetune", args.run_dir)
    _, report = finetune(ds, cfg, checkpoint=args.checkpoint, arm=args.arm, run_dir=run_dir)
    print(f"✅ {report.dataset_id}: test {report.metric} = {report.value:.4f} ({report.arm})")
    print(f"✅ Run directory: {run_dir}")
    return 0


def _split_part(ds: Dataset, checkpoint_dir: Path, part: str, seed: Optional[int]) -> Dataset:
    """Recreate the fine-tuning split recorded next to a checkpoint and return one part."""
    config_path = checkpoint_dir.parent / "config.json"
    cfg = FinetuneConfig.from_dict(_load_config_json(config_path)) if config_path.exists() else FinetuneConfig()
    spec = SplitSpec(ratios=cfg.split_ratios, seed=cfg.seed if seed is None else seed)
    return dict(zip(("train", "val", "test"), split(ds, spec)))[part]


def cmd_evaluate(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    model = ckpt.build_model()
    ds = load_table(args.data, args.schema)
    if args.split:
        ds = _split_part(ds, Path(args.checkpoint), args.split, args.seed)
    report = evaluate(model, ds, args.head, arm="evaluated", seed=args.seed or 0)
    run_dir = make_run_dir("evaluate", args.run_dir)
    save_json(report.to_dict(), run_dir / "report.json")
    print(f"✅ {report.dataset_id}: {report.metric} = {report.value:.4f}")
    return 0


def cmd_ablate(args) -> int:
    cfg = build_finetune_config(argparse.Namespace(**{**vars(args), "ablate": None}))
    datasets = [load_table(p, args.schema) for p in args.data]
    pretrain_sets = [load_table(p, args.schema) for p in args.pretrain_data] if args.pretrain_data else None
    pt_cfg = PretrainConfig.from_dict(_load_config_json(args.pretrain_config)) if args.pretrain_config else None
    run_dir = make_run_dir("ablate", args.run_dir)
    save_json(cfg.to_dict(), run_dir / "config.json", quiet=True)
    run_ablation(datasets, args.ablate or list(DEFAULT_VARIANTS), cfg, pretrain_sets, pt_cfg, run_dir=run_dir)
    print(f"✅ Run directory: {run_dir}")
    return 0


def cmd_inspect_embeddings(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    model = ckpt.build_model()
    report = magnitude_geometry_report(model.tables, None if args.raw else model.reg_head,
                                       args.pairs, seed=args.seed or 0)
    run_dir = make_run_dir("inspect-embeddings", args.run_dir)
    save_json(report.to_dict(), run_dir / "report.json")
    if args.plot:
        plot_geometry(report, run_dir / "geometry.png", n_bin=model.tables.n_bin)
    flag = " (degenerate)" if report.degenerate else ""
    print(f"✅ Spearman(|k_a - k_b|, distance) = {report.spearman:.4f}{flag}")
    return 0


def cmd_gen_synthetic(args) -> int:
    data = _config_dict(args)
    overrides = {"n_rows": args.rows, "n_num_features": args.num, "n_cat_features": args.cat,
                 "label_rule": args.rule, "task": args.task, "noise": args.noise,
                 "missing_rate": args.missing, "seed": args.seed, "name": args.name}
    data.update({k: v for k, v in overrides.items() if v is not None})
    ds = gen_synthetic(SyntheticTaskSpec.from_dict(data))
    out = Path(args.out)
    save_csv(ds, out)
    save_schema(ds.schema, sidecar_schema_path(out))
    print(f"✅ Schema written to {sidecar_schema_path(out)}")
    return 0


def cmd_transfer(args) -> int:
    pt_cfg = build_pretrain_config(argparse.Namespace(**{**vars(args), "config": args.pretrain_config,
                                                         "task": None, "epochs": args.pretrain_epochs}))
    ft_cfg = build_finetune_config(args)
    sources = [load_table(p, args.schema) for p in args.data]
    target = load_table(args.target, args.target_schema)
    run_dir = make_run_dir("transfer", args.run_dir)

    arms = {"pretrained": [], "random-init": []}
    for seed in range(args.seeds):
        ckpt = pretrain(sources, replace(pt_cfg, seed=seed), verbose=False)
        for arm in arms:
            ds = replace(target, name=f"{target.name}-seed{seed}")
            _, report = finetune(ds, replace(ft_cfg, seed=seed), checkpoint=ckpt, arm=arm, verbose=False)
            arms[arm].append(report)
            print(f"   seed {seed} {arm:<12} {report.metric} = {report.value:.4f}")

    bucket: DeltaBucket = delta_buckets(arms["random-init"], arms["pretrained"])
    table = render_delta_table({"pretrained vs random": bucket})
    print("\n" + table)
    save_json({"arms": {a: [r.to_dict() for r in rs] for a, rs in arms.items()},
               "summary": compare_arms(arms), "bucket": bucket.to_dict()}, run_dir / "report.json")
    (run_dir / "delta_table.txt").write_text(table + "\n", encoding="utf-8")
    return 0


def cmd_stats(args) -> int:
    rows = [dataset_stats(load_table(p, args.schema, quiet=True)) for p in args.data]
    for stats in rows:
        print(f"📋 {stats['name']}")
        for key, value in stats.items():
            if key != "name":
                print(f"   {key}: {value}")
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def _common(p: argparse.ArgumentParser, data_nargs=None):
    p.add_argument("--config", help="JSON config file for this verb")
    p.add_argument("--schema", help="Schema JSON (default: <csv stem>.schema.json)")
    p.add_argument("--data", nargs=data_nargs, required=True, help="Input CSV file(s)")
    p.add_argument("--seed", type=int)
    p.add_argument("--deterministic", action="store_true", help="Bit-reproducible kernels")
    p.add_argument("--run-dir", help="Output root (overrides TABTOK_RUN_DIR)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tabtok", description="Tabular magnitude-token language model")
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("pretrain", help="Pre-train on several tables")
    _common(p, "+")
    p.add_argument("--task", choices=["binclass", "regression", "joint"])
    p.add_argument("--epochs", type=int)
    p.add_argument("--ablate", action="append", help="value2str, vmfe, no-ifa, nbin=K, valpos, noreg")
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("finetune", help="Fine-tune on one table")
    _common(p)
    p.add_argument("--checkpoint", help="Pre-trained checkpoint directory")
    p.add_argument("--arm", choices=["pretrained", "random-init", "vocab-init"])
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--ablate", action="append")
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("evaluate", help="Score a fine-tuned checkpoint on a table")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--head", help="Head id (default: the first head)")
    p.add_argument("--split", choices=["train", "val", "test"], help="Score one split of the table")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", help="Compare encoding variants with the default")
    _common(p, "+")
    p.add_argument("--ablate", action="append", help="Variant flags; repeat for several variants")
    p.add_argument("--pretrain-data", nargs="+", help="Pre-train every variant on these tables first")
    p.add_argument("--pretrain-config")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("inspect-embeddings", help="Magnitude-token geometry report")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--pairs", type=int, default=1000)
    p.add_argument("--raw", action="store_true", help="Measure raw embeddings instead of f(.)")
    p.add_argument("--plot", action="store_true")
    p.add_argument("--seed", type=int)
    p.add_argument("--run-dir")
    p.set_defaults(func=cmd_inspect_embeddings)

    p = sub.add_parser("gen-synthetic", help="Write a synthetic table and its schema")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--rows", type=int)
    p.add_argument("--num", type=int)
    p.add_argument("--cat", type=int)
    p.add_argument("--rule", choices=["linear-in-bins", "categorical-lookup"])
    p.add_argument("--task", choices=["binclass", "regression"])
    p.add_argument("--noise", type=float)
    p.add_argument("--missing", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--name")
    p.set_defaults(func=cmd_gen_synthetic)

    p = sub.add_parser("transfer", help="Pre-trained vs random initialisation on a held-out table")
    _common(p, "+")
    p.add_argument("--target", required=True)
    p.add_argument("--target-schema")
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--pretrain-config")
    p.add_argument("--pretrain-epochs", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--ablate", action="append")
    p.set_defaults(func=cmd_transfer)

    p = sub.add_parser("stats", help="Print dataset statistics")
    p.add_argument("--data", nargs="+", required=True)
    p.add_argument("--schema")
    p.set_defaults(func=cmd_stats)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Parse arguments, run the verb and map errors to exit codes."""
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except TabTokError as e:
        print(f"❌ {type(e).__name__}: {e}")
        return e.exit_code
    except FileNotFoundError as e:
        print(f"❌ {e}")
        return 3


if __name__ == "__main__":
    sys.exit(main())
