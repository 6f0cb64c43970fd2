"""
Model - Table tensorization and the assembled tabtok network

This module wires the pieces together:
- ModelConfig / AblationConfig: architecture and numeric-encoding switches
- TableTensors: a Dataset tokenized against a Vocabulary and its bins
- TabTokModel: shared trunk (tables, IFA, encoder, regularizer head) plus
  one prediction head per dataset
- ablation_forward: prediction under an explicit ablation configuration

Batched IFA pads every feature to the fixed length 1 + max_name_len +
max_value_len, so a feature's fused vector never depends on the shapes or
contents of other features.
"""

import re
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Tuple

import numpy as np
import torch
from torch import nn

from .backbone import MagnitudeRegHead, PredictionHead, TabularEncoder
from .discretizer import BinBoundaries, BinConfig, bin_indices, value_multipliers
from .errors import ConfigError, ConfigMismatch, config_from_dict
from .feature_encoder import EmbeddingTables, FeatureTokens, IntraFeatureAttention
from .table_store import MISSING_TEXT, Dataset, FeatureKind, TaskType
from .text_codec import (
    PAD_ID,
    TokenKind,
    TokenSequence,
    Vocabulary,
    encode_text,
    format_number,
    magnitude_token_id,
)


class NumericEncoding(str, Enum):
    RMT = "rmt"
    VALUE2STR = "value2str"
    VMFE = "vmfe"


@dataclass
class AblationConfig:
    """
    Switches for the encoding variants.

    The defaults are the headline configuration: magnitude tokens, IFA on,
    no position encoding on values, triplet regularizer during pre-training.
    """

    numeric_encoding: NumericEncoding = NumericEncoding.RMT
    use_ifa: bool = True
    n_bin: Optional[int] = None
    value_position_encoding: bool = False
    use_triplet_reg: bool = True

    def __post_init__(self):
        self.numeric_encoding = NumericEncoding(self.numeric_encoding)
        if self.n_bin is not None and self.n_bin < 2:
            raise ConfigError(f"n_bin override must be >= 2, got {self.n_bin}")

    @property
    def tag(self) -> str:
        parts = []
        if self.numeric_encoding != NumericEncoding.RMT:
            parts.append(self.numeric_encoding.value)
        if not self.use_ifa:
            parts.append("no-ifa")
        if self.n_bin is not None:
            parts.append(f"nbin={self.n_bin}")
        if self.value_position_encoding:
            parts.append("valpos")
        if not self.use_triplet_reg:
            parts.append("noreg")
        return "+".join(parts) or "default"

    def to_dict(self) -> Dict:
        out = asdict(self)
        out["numeric_encoding"] = self.numeric_encoding.value
        return out


@dataclass
class ModelConfig:
    d: int = 64
    n_heads: int = 4
    n_layers: int = 4
    d_ff: int = 256
    dropout: float = 0.1
    head_dropout: float = 0.1
    max_name_len: int = 16
    max_value_len: int = 8
    max_words: int = 4096
    init_std: float = 0.02
    bin: BinConfig = field(default_factory=BinConfig)
    ablation: AblationConfig = field(default_factory=AblationConfig)

    def __post_init__(self):
        if isinstance(self.bin, dict):
            self.bin = BinConfig.from_dict(self.bin)
        if isinstance(self.ablation, dict):
            self.ablation = config_from_dict(AblationConfig, self.ablation)
        self.validate()

    def validate(self):
        if self.d <= 0 or self.d % self.n_heads != 0:
            raise ConfigError(f"d={self.d} must be positive and divisible by n_heads={self.n_heads}")
        if self.n_layers < 0 or self.max_name_len < 1 or self.max_value_len < 1:
            raise ConfigError("n_layers >= 0, max_name_len >= 1 and max_value_len >= 1 are required")
        if not (0.0 <= self.dropout < 1.0 and 0.0 <= self.head_dropout < 1.0):
            raise ConfigError("Dropout rates must lie in [0, 1)")

    @property
    def effective_bin(self) -> BinConfig:
        """Bin config after the ablation n_bin override."""
        if self.ablation.n_bin is None:
            return self.bin
        return BinConfig(n_bin=self.ablation.n_bin, min_leaf_size=self.bin.min_leaf_size,
                         regression_target_bins=self.bin.regression_target_bins)

    def to_dict(self) -> Dict:
        out = asdict(self)
        out["ablation"] = self.ablation.to_dict()
        return out

    @classmethod
    def from_dict(cls, data: Dict) -> "ModelConfig":
        return config_from_dict(cls, data)


# ---------------------------------------------------------------------------
# Tensorization
# ---------------------------------------------------------------------------

@dataclass
class TableTensors:
    """
    Fixed-shape token tensors of one table (N rows, F features).

    name_ids      [F, max_name_len]       word ids, PAD-filled
    name_len      [F]
    value_ids     [N, F, max_value_len]   magnitude id in slot 0 for numeric cells, word ids otherwise
    value_len     [N, F]
    multiplier    [N, F]                  value multiplier (1.0 where not numeric)
    numeric_cell  [N, F]                  observed numerical cell encoded as a magnitude value
    labels        [N]
    """

    name_ids: torch.Tensor
    name_len: torch.Tensor
    value_ids: torch.Tensor
    value_len: torch.Tensor
    multiplier: torch.Tensor
    numeric_cell: torch.Tensor
    labels: torch.Tensor

    def __len__(self) -> int:
        return self.value_ids.shape[0]

    @property
    def n_features(self) -> int:
        return self.name_ids.shape[0]

    def select(self, rows) -> "TableTensors":
        rows = torch.as_tensor(rows, dtype=torch.long)
        return TableTensors(self.name_ids, self.name_len, self.value_ids[rows], self.value_len[rows],
                            self.multiplier[rows], self.numeric_cell[rows], self.labels[rows])

    def permute_features(self, order) -> "TableTensors":
        order = torch.as_tensor(order, dtype=torch.long)
        return TableTensors(self.name_ids[order], self.name_len[order], self.value_ids[:, order],
                            self.value_len[:, order], self.multiplier[:, order],
                            self.numeric_cell[:, order], self.labels)

    def token_count(self, row: int) -> int:
        """Total name + value tokens of one row."""
        return int(self.name_len.sum() + self.value_len[row].sum())

    def feature_tokens(self, row: int, vocab: Vocabulary) -> List[FeatureTokens]:
        """The row as a list of FeatureTokens (for single-sample fusion)."""
        out = []
        for f in range(self.n_features):
            name = self.name_ids[f, : int(self.name_len[f])].tolist()
            name_seq = TokenSequence(name, [TokenKind.WORD] * len(name))
            values = self.value_ids[row, f, : int(self.value_len[row, f])].tolist()
            if vocab.is_magnitude(values[0]):
                out.append(FeatureTokens(name=name_seq, magnitude=values[0] - vocab.magnitude_base,
                                         multiplier=float(self.multiplier[row, f])))
            else:
                out.append(FeatureTokens(name=name_seq,
                                         text=TokenSequence(values, [TokenKind.WORD] * len(values))))
        return out


def _pad(ids: List[int], length: int) -> Tuple[List[int], int]:
    ids = ids[:length]
    return ids + [PAD_ID] * (length - len(ids)), len(ids)


def tensorize(ds: Dataset, vocab: Vocabulary, bins: Dict[str, BinBoundaries], cfg: ModelConfig,
              labels: Optional[np.ndarray] = None) -> TableTensors:
    """
    Tokenize a dataset for the model.

    Args:
        ds: Dataset to encode
        vocab: Frozen vocabulary
        bins: Boundaries of every numerical feature (fitted on training data)
        cfg: Model configuration (numeric encoding, name / value lengths)
        labels: Optional replacement labels (e.g. standardized targets)

    Returns:
        TableTensors for all rows
    """
    encoding = cfg.ablation.numeric_encoding
    n, n_feat = len(ds), len(ds.schema.columns)
    lv = cfg.max_value_len

    name_ids = np.zeros((n_feat, cfg.max_name_len), dtype=np.int64)
    name_len = np.zeros(n_feat, dtype=np.int64)
    value_ids = np.zeros((n, n_feat, lv), dtype=np.int64)
    value_len = np.ones((n, n_feat), dtype=np.int64)
    multiplier = np.ones((n, n_feat), dtype=np.float64)
    numeric_cell = np.zeros((n, n_feat), dtype=bool)
    missing_ids, missing_len = _pad(encode_text(vocab, MISSING_TEXT).ids, lv)
    text_cache: Dict[str, Tuple[List[int], int]] = {}

    def text_ids(text: str) -> Tuple[List[int], int]:
        if text not in text_cache:
            text_cache[text] = _pad(encode_text(vocab, text).ids, lv)
        return text_cache[text]

    for f, col in enumerate(ds.schema.columns):
        name_ids[f], name_len[f] = _pad(encode_text(vocab, col.name).ids, cfg.max_name_len)
        cells = ds.frame[col.name].to_numpy()

        if col.kind != FeatureKind.NUMERICAL:
            for r, text in enumerate(cells):
                value_ids[r, f], value_len[r, f] = text_ids(str(text))
            continue

        values = cells.astype(np.float64)
        observed = ~np.isnan(values)
        if encoding == NumericEncoding.VALUE2STR:
            for r, x in enumerate(values):
                value_ids[r, f], value_len[r, f] = text_ids(format_number(x)) if observed[r] \
                    else (missing_ids, missing_len)
            continue

        b = bins[col.name]
        if b.n_leaves > vocab.n_bin:
            raise ConfigMismatch(f"Feature '{col.name}' has {b.n_leaves} bins, vocabulary has {vocab.n_bin}")
        safe = np.where(observed, values, b.feature_min)
        k = np.where(observed, bin_indices(b, safe), vocab.n_bin)
        value_ids[:, f, 0] = [magnitude_token_id(vocab, int(kk)) for kk in k]
        multiplier[:, f] = np.where(observed, value_multipliers(b, safe), 1.0)
        numeric_cell[:, f] = observed
        if encoding == NumericEncoding.VMFE:
            value_ids[~observed, f] = missing_ids
            value_len[~observed, f] = missing_len

    y = ds.labels if labels is None else labels
    return TableTensors(
        name_ids=torch.from_numpy(name_ids),
        name_len=torch.from_numpy(name_len),
        value_ids=torch.from_numpy(value_ids),
        value_len=torch.from_numpy(value_len),
        multiplier=torch.from_numpy(multiplier).to(torch.get_default_dtype()),
        numeric_cell=torch.from_numpy(numeric_cell),
        labels=torch.as_tensor(np.asarray(y, dtype=np.float64)).to(torch.get_default_dtype()),
    )


# ---------------------------------------------------------------------------
# Target scaling
# ---------------------------------------------------------------------------

@dataclass
class TargetScaler:
    """Standardizes regression targets; a zero-variance target maps back to its mean."""

    mean: float = 0.0
    std: float = 1.0

    @classmethod
    def fit(cls, y: np.ndarray, task: TaskType) -> "TargetScaler":
        if TaskType(task) == TaskType.BINCLASS:
            return cls(0.0, 1.0)
        return cls(float(np.mean(y)), float(np.std(y)))

    def transform(self, y: np.ndarray) -> np.ndarray:
        return (np.asarray(y, dtype=np.float64) - self.mean) / (self.std if self.std > 0 else 1.0)

    def inverse(self, pred: np.ndarray) -> np.ndarray:
        return np.asarray(pred, dtype=np.float64) * self.std + self.mean


def head_key(name: str) -> str:
    """ModuleDict-safe head id for a dataset name."""
    return re.sub(r"\W", "_", name) or "dataset"


# ---------------------------------------------------------------------------
# Network
# ---------------------------------------------------------------------------

class TabTokModel(nn.Module):
    """
    Shared trunk plus per-dataset prediction heads.

    Examples:
        >>> model = TabTokModel(ModelConfig(d=16, n_heads=2, n_layers=1), vocab)
        >>> model.add_head("adult", TaskType.BINCLASS)
        >>> logits = model(tensors, "adult")
    """

    def __init__(self, cfg: ModelConfig, vocab: Vocabulary):
        super().__init__()
        n_bin = cfg.effective_bin.n_bin
        if vocab.n_bin != n_bin:
            raise ConfigMismatch(f"Vocabulary has {vocab.n_bin} magnitude tokens, config expects {n_bin}")
        self.config = cfg
        self.vocab = vocab
        self.tables = EmbeddingTables(vocab.n_word_ids, n_bin, cfg.d, cfg.max_name_len, cfg.init_std)
        self.ifa = IntraFeatureAttention(cfg.d, cfg.n_heads)
        self.encoder = TabularEncoder(cfg.d, cfg.n_heads, cfg.n_layers, cfg.d_ff, cfg.dropout)
        self.reg_head = MagnitudeRegHead(cfg.d)
        self.heads = nn.ModuleDict()
        self.head_tasks: Dict[str, TaskType] = {}
        self.target_scalers: Dict[str, TargetScaler] = {}
        self.bins: Dict[str, Dict[str, BinBoundaries]] = {}

        positions = [0] + list(range(1, cfg.max_name_len + 1)) + [0] * cfg.max_value_len
        self.register_buffer("slot_positions", torch.tensor(positions, dtype=torch.long), persistent=False)

    def add_head(self, head_id: str, task: TaskType, scaler: Optional[TargetScaler] = None,
                 bins: Optional[Dict[str, BinBoundaries]] = None):
        """Attach a freshly initialised prediction head."""
        head = PredictionHead(self.config.d, self.config.head_dropout)
        self.heads[head_id] = head.to(self.tables.word_table.dtype)
        self.head_tasks[head_id] = TaskType(task)
        self.target_scalers[head_id] = scaler or TargetScaler()
        if bins is not None:
            self.bins[head_id] = bins

    def drop_heads(self):
        self.heads = nn.ModuleDict()
        self.head_tasks, self.target_scalers, self.bins = {}, {}, {}

    def feature_slots(self, batch: TableTensors) -> Tuple[torch.Tensor, torch.Tensor]:
        """
        Per-feature token embeddings [B, F, L, d] (slot 0 = CLS) and their key mask [B, F, L].
        """
        cfg = self.config
        tables = self.tables
        b, n_feat = batch.value_ids.shape[:2]
        d = tables.d

        name_rows = tables.word_table[batch.name_ids]  # [F, Ln, d]
        value_rows = tables.lookup(batch.value_ids)    # [B, F, Lv, d]

        encoding = cfg.ablation.numeric_encoding
        numeric = batch.numeric_cell.unsqueeze(-1)
        if encoding == NumericEncoding.RMT:
            scale = torch.where(batch.numeric_cell, batch.multiplier, torch.ones_like(batch.multiplier))
            first = value_rows[:, :, 0] * scale.unsqueeze(-1)
            value_rows = torch.cat([first.unsqueeze(2), value_rows[:, :, 1:]], dim=2)
        elif encoding == NumericEncoding.VMFE:
            name_valid = (torch.arange(cfg.max_name_len) < batch.name_len.unsqueeze(-1)).to(name_rows.dtype)
            name_mean = (name_rows * name_valid.unsqueeze(-1)).sum(1) / batch.name_len.unsqueeze(-1).to(name_rows.dtype)
            vmfe = name_mean.unsqueeze(0) * batch.multiplier.unsqueeze(-1)  # [B, F, d]
            first = torch.where(numeric, vmfe, value_rows[:, :, 0])
            value_rows = torch.cat([first.unsqueeze(2), value_rows[:, :, 1:]], dim=2)

        cls = tables.cls_vector.expand(b, n_feat, 1, d)
        h = torch.cat([cls, name_rows.expand(b, -1, -1, -1), value_rows], dim=2)

        name_mask = torch.arange(cfg.max_name_len) < batch.name_len.unsqueeze(-1)      # [F, Ln]
        value_mask = torch.arange(cfg.max_value_len) < batch.value_len.unsqueeze(-1)   # [B, F, Lv]
        mask = torch.cat([
            torch.ones(b, n_feat, 1, dtype=torch.bool),
            name_mask.expand(b, -1, -1),
            value_mask,
        ], dim=2)
        return h, mask

    def backbone_input(self, batch: TableTensors) -> Tuple[torch.Tensor, Optional[torch.Tensor]]:
        """
        Rows fed to the encoder and their padding mask (None when unpadded).

        With IFA: [CLS; h_1 .. h_n], exactly 1 + n rows. Without IFA: CLS followed
        by every feature's name and value tokens with their position embeddings.
        """
        h, mask = self.feature_slots(batch)
        p = self.tables.positions(self.slot_positions)
        b = h.shape[0]
        cls = self.tables.cls_vector.expand(b, 1, -1)

        if self.config.ablation.use_ifa:
            fused = self.ifa(h, p, mask, value_position=self.config.ablation.value_position_encoding)
            return torch.cat([cls, fused], dim=1), None

        tokens = (h + p)[:, :, 1:].flatten(1, 2)            # [B, F*(Ln+Lv), d]
        valid = mask[:, :, 1:].flatten(1, 2)
        x = torch.cat([cls, tokens], dim=1)
        padding = torch.cat([torch.zeros(b, 1, dtype=torch.bool), ~valid], dim=1)
        return x, padding

    def backbone_length(self, batch: TableTensors, row: int = 0) -> int:
        """Number of real (unpadded) encoder rows for one sample."""
        if self.config.ablation.use_ifa:
            return 1 + batch.n_features
        return 1 + batch.token_count(row)

    def forward(self, batch: TableTensors, head_id: str, train_mode: Optional[bool] = None) -> torch.Tensor:
        """Predictions (logits or standardized targets) [B] from head ``head_id``."""
        x, padding = self.backbone_input(batch)
        cls = self.encoder(x, padding)
        return self.heads[head_id](cls, train_mode=train_mode)

    @torch.no_grad()
    def predict(self, batch: TableTensors, head_id: str, batch_size: int = 512) -> np.ndarray:
        """
        Eval-mode predictions on the original target scale (logits for binclass).
        """
        was_training = self.training
        self.eval()
        outs = []
        for start in range(0, len(batch), batch_size):
            rows = torch.arange(start, min(start + batch_size, len(batch)))
            outs.append(self(batch.select(rows), head_id).double().numpy())
        self.train(was_training)
        pred = np.concatenate(outs) if outs else np.empty(0)
        return self.target_scalers[head_id].inverse(pred)


def ablation_forward(cfg: AblationConfig, batch: TableTensors, model: TabTokModel, head_id: str) -> np.ndarray:
    """
    Predict with a model under an explicit ablation configuration.

    Raises:
        ConfigMismatch: If the model was built with a different configuration
    """
    if model.config.ablation != cfg:
        raise ConfigMismatch(f"Model built as '{model.config.ablation.tag}', asked for '{cfg.tag}'")
    return model.predict(batch, head_id)
