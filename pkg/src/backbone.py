"""
Backbone - Order-agnostic encoder, prediction heads and losses

The encoder is a stack of pre-norm transformer blocks (GELU feed-forward)
with no positional encoding over features, so permuting feature rows only
permutes encoder rows and leaves the CLS output unchanged.

Losses:
- supervised_loss: BCE on logits (binclass) or MSE (regression)
- triplet_reg_loss: magnitude-aware triplet hinge on the magnitude table
- total_loss: L_sup + lambda * L_reg (lambda = 0 when fine-tuning)
"""

from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .errors import ConfigError, GraphReuse, LengthMismatch, ShapeMismatch
from .table_store import TaskType


class TabularEncoder(nn.Module):
    """
    Pre-norm transformer encoder returning the CLS (row 0) output.

    Args:
        d: Model width
        n_heads: Attention heads (must divide d)
        n_layers: Transformer blocks; 0 makes the encoder the identity
        d_ff: Feed-forward width
        dropout: Dropout inside the blocks
    """

    def __init__(self, d: int = 64, n_heads: int = 4, n_layers: int = 4, d_ff: int = 256,
                 dropout: float = 0.1):
        super().__init__()
        if d % n_heads != 0:
            raise ShapeMismatch(f"d={d} is not divisible by n_heads={n_heads}")
        self.n_layers = n_layers
        if n_layers > 0:
            layer = nn.TransformerEncoderLayer(
                d_model=d,
                nhead=n_heads,
                dim_feedforward=d_ff,
                dropout=dropout,
                activation="gelu",
                batch_first=True,
                norm_first=True,
            )
            self.blocks = nn.TransformerEncoder(layer, num_layers=n_layers, norm=nn.LayerNorm(d),
                                                enable_nested_tensor=False)
        else:
            self.blocks = None

    def forward(self, x: torch.Tensor, padding_mask: Optional[torch.Tensor] = None) -> torch.Tensor:
        """
        Args:
            x: [B, S, d] rows; row 0 is the CLS slot
            padding_mask: Optional bool [B, S], True marks padding

        Returns:
            [B, d] CLS outputs
        """
        if x.dim() != 3 or x.shape[1] < 2:
            raise ShapeMismatch(f"Encoder input needs shape [B, S>=2, d], got {tuple(x.shape)}")
        if self.blocks is None:
            return x[:, 0]
        return self.blocks(x, src_key_padding_mask=padding_mask)[:, 0]


def encode(x: torch.Tensor, encoder: TabularEncoder) -> torch.Tensor:
    """Encode one fused sample [(1 + n), d] and return its CLS output [d]."""
    return encoder(x.unsqueeze(0))[0]


class PredictionHead(nn.Module):
    """Dropout(Linear_1(Tanh(Linear_2(x)))) with one output (logit or scalar)."""

    def __init__(self, d: int, dropout: float = 0.1):
        super().__init__()
        self.linear_2 = nn.Linear(d, d)
        self.linear_1 = nn.Linear(d, 1)
        self.dropout = dropout

    def forward(self, cls: torch.Tensor, train_mode: Optional[bool] = None) -> torch.Tensor:
        train_mode = self.training if train_mode is None else train_mode
        out = self.linear_1(torch.tanh(self.linear_2(cls))).squeeze(-1)
        return F.dropout(out, p=self.dropout, training=train_mode)


def predict(cls: torch.Tensor, head: PredictionHead, train_mode: bool) -> torch.Tensor:
    """Apply a prediction head; dropout is active only in train_mode."""
    return head(cls, train_mode=train_mode)


class MagnitudeRegHead(nn.Module):
    """f(k) = LayerNorm(Linear(E_k)); used only by the triplet regularizer."""

    def __init__(self, d: int):
        super().__init__()
        self.linear = nn.Linear(d, d)
        self.norm = nn.LayerNorm(d)

    def forward(self, rows: torch.Tensor) -> torch.Tensor:
        return self.norm(self.linear(rows))


@dataclass
class TripletSampler:
    """
    Draws bin-index triplets (k1, k2, k3) with |k1 - k2| < |k1 - k3|.

    Three distinct indices are drawn uniformly; the nearer of the last two
    becomes k2. Draws with equal distances are rejected.
    """

    triplets_per_step: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.triplets_per_step < 1:
            raise ConfigError("triplets_per_step must be >= 1")
        self._rng = np.random.default_rng(self.seed)

    def sample(self, n_bin: int) -> torch.Tensor:
        if n_bin < 3:
            raise ConfigError(f"Triplet sampling needs n_bin >= 3, got {n_bin}")
        rows = []
        while len(rows) < self.triplets_per_step:
            k1, a, b = self._rng.choice(n_bin, size=3, replace=False)
            if abs(k1 - a) == abs(k1 - b):
                continue
            rows.append((k1, a, b) if abs(k1 - a) < abs(k1 - b) else (k1, b, a))
        return torch.tensor(rows, dtype=torch.long)


def triplet_margin(k1, k2, k3, n_bin: int):
    """m = (|k1 - k3| - |k1 - k2|) / n_bin."""
    return (abs(k1 - k3) - abs(k1 - k2)) / n_bin


def triplet_hinge(d12, d13, margin):
    """max(d12 - d13 + m, 0), elementwise for tensors."""
    if isinstance(d12, torch.Tensor):
        return torch.clamp(d12 - d13 + margin, min=0.0)
    return max(d12 - d13 + margin, 0.0)


def triplet_reg_loss(magnitude_table: torch.Tensor, sampler: Union[TripletSampler, torch.Tensor],
                     reg_head: MagnitudeRegHead, n_bin: Optional[int] = None) -> torch.Tensor:
    """
    Magnitude-aware triplet loss, averaged over the sampled triplets.

    Args:
        magnitude_table: [(n_bin + 1), d] magnitude embeddings (MISSING row excluded from sampling)
        sampler: A TripletSampler, or a pre-drawn [T, 3] LongTensor of triplets
        reg_head: The f(.) projection
        n_bin: Magnitude tokens; defaults to rows - 1

    Returns:
        Scalar loss >= 0
    """
    n_bin = n_bin if n_bin is not None else magnitude_table.shape[0] - 1
    triplets = sampler.sample(n_bin) if isinstance(sampler, TripletSampler) else sampler
    f = reg_head(magnitude_table[triplets])  # [T, 3, d]
    d12 = torch.linalg.vector_norm(f[:, 0] - f[:, 1], dim=-1)
    d13 = torch.linalg.vector_norm(f[:, 0] - f[:, 2], dim=-1)
    k = triplets.to(f.dtype)
    margin = triplet_margin(k[:, 0], k[:, 1], k[:, 2], n_bin)
    return triplet_hinge(d12, d13, margin).mean()


def supervised_loss(pred: torch.Tensor, y: torch.Tensor, task: TaskType) -> torch.Tensor:
    """
    Mean BCE on logits for binclass, mean squared error for regression.

    Raises:
        LengthMismatch: If pred and y differ in length
    """
    if pred.shape != y.shape:
        raise LengthMismatch(f"{tuple(pred.shape)} predictions vs {tuple(y.shape)} labels")
    if TaskType(task) == TaskType.BINCLASS:
        return F.binary_cross_entropy_with_logits(pred, y)
    return F.mse_loss(pred, y)


def total_loss(sup, reg, lam: float):
    """L = L_sup + lambda * L_reg."""
    if lam < 0:
        raise ConfigError(f"lambda must be >= 0, got {lam}")
    if lam == 0:
        return sup
    return sup + lam * reg


def backward(loss: torch.Tensor):
    """
    Reverse-mode gradients of ``loss`` into every trainable parameter's .grad.

    Raises:
        GraphReuse: If the graph behind ``loss`` was already back-propagated
    """
    try:
        loss.backward()
    except RuntimeError as e:
        if "second time" in str(e) or "already been freed" in str(e):
            raise GraphReuse("Loss graph was already used for a backward pass") from e
        raise
