"""
Training Engine - Multi-dataset pre-training and downstream fine-tuning

Pre-training:
- carves a stratified validation slice out of every dataset
- builds one frozen vocabulary over all training tables
- gives every dataset its own prediction head on a shared trunk
- each step draws one dataset uniformly at random and one batch from it,
  minimizing L_sup + lambda * L_reg under a linear warmup / decay schedule
- keeps the parameters of the epoch with the lowest mean validation loss

Fine-tuning trains a fresh head with L_sup only and early-stops on the
validation metric (AUC for binclass, RMSE for regression).
"""

import copy
import math
import time
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import torch
from tqdm.auto import tqdm
from transformers import get_linear_schedule_with_warmup

from .backbone import TripletSampler, backward, supervised_loss, total_loss, triplet_reg_loss
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .discretizer import fit_table_bins
from .errors import (
    ConfigError,
    ConfigMismatch,
    EmptyDatasetList,
    NonFiniteLoss,
    OutOfRange,
    SingleClass,
    TaskModeMismatch,
    config_from_dict,
)
from .evaluation import MetricReport, auc, rmse, score
from .helpers import JsonlLogger, save_json, seed_everything
from .model import AblationConfig, ModelConfig, NumericEncoding, TableTensors, TabTokModel, TargetScaler, head_key, tensorize
from .table_store import Dataset, SplitSpec, TaskType, split, validation_carveout
from .text_codec import build_vocab, table_corpus


class TaskMode(str, Enum):
    BINCLASS = "binclass"
    REGRESSION = "regression"
    JOINT = "joint"


class InitArm(str, Enum):
    PRETRAINED = "pretrained"
    RANDOM = "random-init"
    VOCAB = "vocab-init"


@dataclass
class PretrainConfig:
    epochs: int = 30
    batch_size: int = 512
    peak_lr: float = 5e-4
    warmup_frac: float = 0.06
    lam: float = 0.1
    val_frac: float = 0.05
    seed: int = 0
    task_mode: TaskMode = TaskMode.JOINT
    weight_decay: float = 0.01
    triplets_per_step: int = 32
    deterministic: bool = False
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        self.task_mode = TaskMode(self.task_mode)
        if isinstance(self.model, dict):
            self.model = ModelConfig.from_dict(self.model)
        self.validate()

    def validate(self):
        if not (0.0 < self.warmup_frac < 1.0):
            raise ConfigError(f"warmup_frac must lie in (0, 1), got {self.warmup_frac}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        if self.peak_lr <= 0 or self.lam < 0:
            raise ConfigError("peak_lr must be > 0 and lam >= 0")

    def to_dict(self) -> Dict:
        out = asdict(self)
        out["task_mode"] = self.task_mode.value
        out["model"] = self.model.to_dict()
        return out

    @classmethod
    def from_dict(cls, data: Dict) -> "PretrainConfig":
        return config_from_dict(cls, data)


@dataclass
class FinetuneConfig:
    max_epochs: int = 200
    batch_size: int = 64
    lr: float = 1e-5
    weight_decay: float = 0.0
    patience: int = 16
    seed: int = 0
    split_ratios: Tuple[float, float, float] = (0.64, 0.16, 0.20)
    deterministic: bool = False
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        self.split_ratios = tuple(self.split_ratios)
        if isinstance(self.model, dict):
            self.model = ModelConfig.from_dict(self.model)
        self.validate()

    def validate(self):
        if self.lr <= 0:
            raise ConfigError(f"lr must be > 0, got {self.lr}")
        if self.patience < 1 or self.max_epochs < 1 or self.batch_size < 1:
            raise ConfigError("patience, max_epochs and batch_size must be >= 1")
        SplitSpec(ratios=self.split_ratios, seed=self.seed)

    def to_dict(self) -> Dict:
        out = asdict(self)
        out["split_ratios"] = list(self.split_ratios)
        out["model"] = self.model.to_dict()
        return out

    @classmethod
    def from_dict(cls, data: Dict) -> "FinetuneConfig":
        return config_from_dict(cls, data)


# ---------------------------------------------------------------------------
# Schedule and sampling
# ---------------------------------------------------------------------------

def warmup_steps(total_steps: int, warmup_frac: float) -> int:
    """round(warmup_frac * total_steps), at least 1 and at most total_steps."""
    return min(total_steps, max(1, round(warmup_frac * total_steps)))


def lr_at(step: int, total_steps: int, cfg: PretrainConfig) -> float:
    """
    Learning rate of a step under linear warmup then linear decay to 0.

    Agrees with transformers.get_linear_schedule_with_warmup at every step.

    Examples:
        >>> cfg = PretrainConfig(peak_lr=1e-4)
        >>> lr_at(60, 1000, cfg), lr_at(530, 1000, cfg)
        (0.0001, 5e-05)
    """
    if not (0 <= step <= total_steps) or total_steps < 1:
        raise OutOfRange(f"step {step} outside [0, {total_steps}]")
    w = warmup_steps(total_steps, cfg.warmup_frac)
    if step <= w:
        return cfg.peak_lr * step / w
    return cfg.peak_lr * (1.0 - (step - w) / (total_steps - w))


class MultiDatasetSampler:
    """
    Per-step dataset choice plus per-dataset batch cycling.

    The dataset is drawn uniformly; each dataset walks through its own
    shuffled row order and reshuffles when fewer than a batch remain.
    """

    def __init__(self, sizes: Sequence[int], batch_size: int, seed: int = 0):
        if not sizes:
            raise EmptyDatasetList("MultiDatasetSampler needs at least one dataset")
        self.sizes = list(sizes)
        self.batch_size = batch_size
        self._rng = np.random.default_rng(seed)
        self._orders = [self._rng.permutation(n) for n in self.sizes]
        self._cursors = [0] * len(self.sizes)

    def next_batch(self, m: int) -> np.ndarray:
        b = min(self.batch_size, self.sizes[m])
        if self._cursors[m] + b > self.sizes[m]:
            self._orders[m] = self._rng.permutation(self.sizes[m])
            self._cursors[m] = 0
        rows = self._orders[m][self._cursors[m]: self._cursors[m] + b]
        self._cursors[m] += b
        return rows

    def sample(self) -> Tuple[int, np.ndarray]:
        m = int(self._rng.integers(len(self.sizes)))
        return m, self.next_batch(m)


def _check_task_mode(datasets: List[Dataset], mode: TaskMode):
    if mode == TaskMode.JOINT:
        return
    for ds in datasets:
        if ds.task.value != mode.value:
            raise TaskModeMismatch(f"task_mode={mode.value} but dataset '{ds.name}' is {ds.task.value}")


def _head_ids(datasets: List[Dataset]) -> List[str]:
    ids, seen = [], {}
    for ds in datasets:
        key = head_key(ds.name)
        seen[key] = seen.get(key, 0) + 1
        ids.append(key if seen[key] == 1 else f"{key}_{seen[key]}")
    return ids


def _check_finite(loss: torch.Tensor, where: str):
    if not torch.isfinite(loss):
        raise NonFiniteLoss(f"Non-finite loss {loss.item()} at {where}")


@torch.no_grad()
def mean_loss(model: TabTokModel, tensors: TableTensors, head_id: str, batch_size: int = 512) -> float:
    """Row-weighted eval-mode supervised loss on standardized labels."""
    was_training = model.training
    model.eval()
    task = model.head_tasks[head_id]
    total = 0.0
    for start in range(0, len(tensors), batch_size):
        batch = tensors.select(torch.arange(start, min(start + batch_size, len(tensors))))
        total += float(supervised_loss(model(batch, head_id), batch.labels, task)) * len(batch)
    model.train(was_training)
    return total / len(tensors)


# ---------------------------------------------------------------------------
# Pre-training
# ---------------------------------------------------------------------------

def pretrain(datasets: List[Dataset], cfg: PretrainConfig, run_dir: Optional[Union[str, Path]] = None,
             verbose: bool = True) -> Checkpoint:
    """
    Pre-train a shared trunk with one head per dataset.

    Args:
        datasets: Pre-training tables
        cfg: Pre-training configuration
        run_dir: Optional directory for config.json, train_log.jsonl and checkpoint/
        verbose: Print progress

    Returns:
        Checkpoint of the epoch with the lowest mean validation loss

    Raises:
        EmptyDatasetList: If no dataset is given
        TaskModeMismatch: If a dataset's task conflicts with cfg.task_mode
        NonFiniteLoss: If a step produces a non-finite loss
    """
    if not datasets:
        raise EmptyDatasetList("pretrain needs at least one dataset")
    _check_task_mode(datasets, cfg.task_mode)
    seed_everything(cfg.seed, cfg.deterministic)
    mcfg = cfg.model
    bin_cfg = mcfg.effective_bin
    run_dir = Path(run_dir) if run_dir is not None else None
    log = JsonlLogger(run_dir / "train_log.jsonl" if run_dir else None)
    if run_dir:
        save_json(cfg.to_dict(), run_dir / "config.json", quiet=not verbose)

    if verbose:
        print(f"📋 Pre-training on {len(datasets)} datasets ({cfg.task_mode.value}, {mcfg.ablation.tag})")

    splits = [validation_carveout(ds, cfg.val_frac, cfg.seed) for ds in datasets]
    include_numbers = mcfg.ablation.numeric_encoding == NumericEncoding.VALUE2STR
    corpus = [text for train, _ in splits for text in table_corpus(train, include_numbers)]
    vocab = build_vocab(corpus, mcfg.max_words, bin_cfg.n_bin)

    model = TabTokModel(mcfg, vocab)
    head_ids = _head_ids(datasets)
    train_tensors, val_tensors = [], []
    for head_id, (train, val) in zip(head_ids, splits):
        bins = fit_table_bins(train, bin_cfg)
        scaler = TargetScaler.fit(train.labels, train.task)
        model.add_head(head_id, train.task, scaler, bins)
        train_tensors.append(tensorize(train, vocab, bins, mcfg, scaler.transform(train.labels)))
        val_tensors.append(tensorize(val, vocab, bins, mcfg, scaler.transform(val.labels)))

    steps_per_epoch = math.ceil(sum(len(t) for t in train_tensors) / cfg.batch_size)
    total_steps = cfg.epochs * steps_per_epoch
    optimizer = torch.optim.AdamW(model.parameters(), lr=cfg.peak_lr, weight_decay=cfg.weight_decay)
    scheduler = get_linear_schedule_with_warmup(optimizer, warmup_steps(total_steps, cfg.warmup_frac), total_steps)
    sampler = MultiDatasetSampler([len(t) for t in train_tensors], cfg.batch_size, cfg.seed)
    use_reg = (mcfg.ablation.use_triplet_reg and cfg.lam > 0
               and mcfg.ablation.numeric_encoding == NumericEncoding.RMT and bin_cfg.n_bin >= 3)
    triplets = TripletSampler(cfg.triplets_per_step, cfg.seed)

    best_loss, best_state, best_epoch = math.inf, None, -1
    history: List[Dict] = []
    step = 0
    model.train()
    for epoch in tqdm(range(cfg.epochs), desc="Pretraining", disable=not verbose):
        for _ in range(steps_per_epoch):
            m, rows = sampler.sample()
            head_id = head_ids[m]
            batch = train_tensors[m].select(rows)
            l_sup = supervised_loss(model(batch, head_id), batch.labels, model.head_tasks[head_id])
            l_reg = triplet_reg_loss(model.tables.magnitude_table, triplets, model.reg_head) if use_reg else 0.0
            loss = total_loss(l_sup, l_reg, cfg.lam if use_reg else 0.0)
            _check_finite(loss, f"step {step}")

            lr = scheduler.get_last_lr()[0]
            optimizer.zero_grad(set_to_none=True)
            backward(loss)
            optimizer.step()
            scheduler.step()
            log.write(type="step", step=step, dataset_id=head_id, lr=lr, loss=float(loss),
                      l_sup=float(l_sup), l_reg=float(l_reg))
            step += 1

        per_dataset = {h: mean_loss(model, t, h) for h, t in zip(head_ids, val_tensors)}
        avg = float(np.mean(list(per_dataset.values())))
        history.append({"epoch": epoch, "avg_val_loss": avg, "per_dataset_val": per_dataset})
        log.write(type="epoch", epoch=epoch, avg_val_loss=avg, per_dataset_val=per_dataset)
        if avg < best_loss:
            best_loss, best_epoch = avg, epoch
            best_state = copy.deepcopy(model.state_dict())

    model.load_state_dict(best_state)
    ckpt = Checkpoint.from_model(model, step=step, epoch=best_epoch, best_val_loss=best_loss, history=history)
    if verbose:
        print(f"✅ Best epoch {best_epoch} with mean validation loss {best_loss:.4f}")
    if run_dir:
        save_checkpoint(ckpt, run_dir / "checkpoint", quiet=not verbose)
    return ckpt


# ---------------------------------------------------------------------------
# Fine-tuning
# ---------------------------------------------------------------------------

def _check_ablation(cfg: FinetuneConfig, checkpoint: Checkpoint, verbose: bool):
    """The checkpoint fixes the encoding; a non-default ablation in cfg must agree with it."""
    wanted, stored = cfg.model.ablation, checkpoint.config.ablation
    if wanted == stored:
        return
    if wanted != AblationConfig():
        raise ConfigMismatch(f"Fine-tuning ablation '{wanted.tag}' differs from the checkpoint's '{stored.tag}'")
    if verbose:
        print(f"⚠️  Using the checkpoint ablation '{stored.tag}'")


def _init_model(train: Dataset, cfg: FinetuneConfig, checkpoint: Optional[Checkpoint], arm: InitArm,
                verbose: bool = False) -> TabTokModel:
    if checkpoint is not None:
        _check_ablation(cfg, checkpoint, verbose)
    if arm == InitArm.PRETRAINED:
        return checkpoint.build_model(with_heads=False)
    if arm == InitArm.VOCAB:
        model = TabTokModel(checkpoint.config, checkpoint.vocab)
        with torch.no_grad():
            model.tables.word_table.copy_(checkpoint.tensors["tables.word_table"])
        return model
    mcfg = checkpoint.config if checkpoint is not None else cfg.model
    include_numbers = mcfg.ablation.numeric_encoding == NumericEncoding.VALUE2STR
    vocab = build_vocab(table_corpus(train, include_numbers), mcfg.max_words, mcfg.effective_bin.n_bin)
    return TabTokModel(mcfg, vocab)


def _val_score(model: TabTokModel, val: TableTensors, y_val: np.ndarray, head_id: str) -> float:
    """Higher is better: AUC, or -RMSE; -loss when validation holds a single class."""
    pred = model.predict(val, head_id)
    if model.head_tasks[head_id] == TaskType.BINCLASS:
        try:
            return auc(pred, y_val)
        except SingleClass:
            return -mean_loss(model, val, head_id)
    return -rmse(pred, y_val)


def finetune(data: Union[Dataset, Tuple[Dataset, Dataset, Dataset]], cfg: FinetuneConfig,
             checkpoint: Optional[Union[Checkpoint, str, Path]] = None, arm: Optional[str] = None,
             run_dir: Optional[Union[str, Path]] = None, log: Optional[JsonlLogger] = None,
             verbose: bool = True) -> Tuple[TabTokModel, MetricReport]:
    """
    Fine-tune on one downstream dataset and report the test metric.

    Args:
        data: A dataset (split by cfg.split_ratios) or a (train, val, test) triple
        cfg: Fine-tuning configuration
        checkpoint: Pre-trained checkpoint, or a path to one
        arm: pretrained (default with a checkpoint), random-init (default without)
            or vocab-init (checkpoint vocabulary and word table, rest random)
        run_dir: Optional directory for config, log, checkpoint and report
        log: Optional JSON-lines logger; per-epoch records carry step counts and wall time
        verbose: Print progress

    Returns:
        (best-validation model, MetricReport on the test split)
    """
    if isinstance(checkpoint, (str, Path)):
        checkpoint = load_checkpoint(checkpoint)
    arm = InitArm(arm or (InitArm.PRETRAINED if checkpoint is not None else InitArm.RANDOM))
    if arm != InitArm.RANDOM and checkpoint is None:
        raise ConfigError(f"Arm '{arm.value}' needs a checkpoint")

    seed_everything(cfg.seed, cfg.deterministic)
    if isinstance(data, Dataset):
        train, val, test = split(data, SplitSpec(ratios=cfg.split_ratios, seed=cfg.seed))
    else:
        train, val, test = data
    run_dir = Path(run_dir) if run_dir is not None else None
    if log is None:
        log = JsonlLogger(run_dir / "train_log.jsonl" if run_dir else None)
    if run_dir:
        save_json(cfg.to_dict(), run_dir / "config.json", quiet=not verbose)

    model = _init_model(train, cfg, checkpoint, arm, verbose)
    mcfg = model.config
    head_id = head_key(train.name)
    bins = fit_table_bins(train, mcfg.effective_bin)
    scaler = TargetScaler.fit(train.labels, train.task)
    model.add_head(head_id, train.task, scaler, bins)
    train_t = tensorize(train, model.vocab, bins, mcfg, scaler.transform(train.labels))
    val_t = tensorize(val, model.vocab, bins, mcfg, scaler.transform(val.labels))
    if verbose:
        print(f"📋 Fine-tuning '{train.name}' ({arm.value}, {mcfg.ablation.tag}): "
              f"{len(train)}/{len(val)}/{len(test)} rows")

    optimizer = torch.optim.AdamW(model.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)
    rng = np.random.default_rng(cfg.seed)
    best_score, best_state, best_epoch, waited = -math.inf, None, -1, 0
    task = model.head_tasks[head_id]

    for epoch in tqdm(range(cfg.max_epochs), desc="Fine-tuning", disable=not verbose):
        model.train()
        order = rng.permutation(len(train_t))
        losses, started = [], time.perf_counter()
        for start in range(0, len(order), cfg.batch_size):
            batch = train_t.select(order[start: start + cfg.batch_size])
            loss = total_loss(supervised_loss(model(batch, head_id), batch.labels, task), 0.0, 0.0)
            _check_finite(loss, f"epoch {epoch}")
            optimizer.zero_grad(set_to_none=True)
            backward(loss)
            optimizer.step()
            losses.append(float(loss))
        seconds = time.perf_counter() - started

        val_score = _val_score(model, val_t, val.labels, head_id)
        log.write(type="finetune_epoch", epoch=epoch, train_loss=float(np.mean(losses)), val_metric=val_score,
                  steps=len(losses), seconds=seconds)
        if val_score > best_score:
            best_score, best_epoch, waited = val_score, epoch, 0
            best_state = copy.deepcopy(model.state_dict())
        else:
            waited += 1
            if waited >= cfg.patience:
                if verbose:
                    print(f"🔍 Early stop at epoch {epoch}, best epoch {best_epoch}")
                break

    model.load_state_dict(best_state)
    model.eval()
    arm_tag = arm.value if mcfg.ablation.tag == "default" else f"{arm.value}+{mcfg.ablation.tag}"
    report = evaluate(model, test, head_id, arm=arm_tag, seed=cfg.seed,
                      split_sizes=(len(train), len(val), len(test)))
    if verbose:
        print(f"✅ Test {report.metric} = {report.value:.4f}")
    if run_dir:
        save_checkpoint(Checkpoint.from_model(model, epoch=best_epoch, history=[
            r for r in log.records if r["type"] == "finetune_epoch"]), run_dir / "checkpoint", quiet=not verbose)
        save_json(report.to_dict(), run_dir / "report.json", quiet=not verbose)
    return model, report


def evaluate(model: TabTokModel, ds: Dataset, head_id: Optional[str] = None, arm: str = "pretrained",
             seed: int = 0, split_sizes: Tuple[int, int, int] = (0, 0, 0)) -> MetricReport:
    """
    Score a model head on a dataset.

    The dataset is tokenized with the bins stored for the head, so any split
    of the table the head was trained on can be scored.
    """
    head_id = head_id or next(iter(model.heads.keys()))
    tensors = tensorize(ds, model.vocab, model.bins[head_id], model.config)
    metric, value = score(model.predict(tensors, head_id), ds.labels, model.head_tasks[head_id])
    return MetricReport(dataset_id=ds.name, task=ds.task, metric=metric, value=value,
                        split_sizes=split_sizes, seed=seed, arm=arm)
