"""
Feature Encoder - Embedding tables and intra-feature attention (IFA)

Every feature is embedded as its name tokens followed by its value token(s):
- name tokens come from the word table and carry position ids 1..l1
- a numerical value is one magnitude token: the bin's row of the magnitude
  table scaled by the value multiplier; position id 0
- categorical / string values are word tokens, all at position id 0

A single multi-head self-attention module, shared by all features and all
datasets, reads [CLS; name; value] and returns the output at the CLS slot.
Position embeddings enter queries and keys only; values are projected from
the raw embeddings.
"""

import math
from dataclasses import dataclass
from typing import List, Optional, Tuple

import torch
from torch import nn

from .errors import ConfigError, IdOutOfBounds, ShapeMismatch
from .text_codec import TokenSequence


class EmbeddingTables(nn.Module):
    """
    Word, magnitude, CLS and position embeddings sharing one width d.

    Args:
        n_word_ids: Rows of the word table (special ids + words)
        n_bin: Magnitude tokens; the table has n_bin + 1 rows (last = MISSING)
        d: Embedding width
        max_name_len: Longest name kept; the position table has max_name_len + 1 rows
        init_std: Std of the normal initialisation
    """

    def __init__(self, n_word_ids: int, n_bin: int, d: int, max_name_len: int,
                 init_std: float = 0.02):
        super().__init__()
        if d <= 0:
            raise ShapeMismatch(f"Embedding width must be positive, got {d}")
        self.n_bin = n_bin
        self.max_name_len = max_name_len
        self.word_table = nn.Parameter(torch.randn(n_word_ids, d) * init_std)
        self.magnitude_table = nn.Parameter(torch.randn(n_bin + 1, d) * init_std)
        self.cls_vector = nn.Parameter(torch.randn(d) * init_std)
        self.position_table = nn.Parameter(torch.randn(max_name_len + 1, d) * init_std)

    @property
    def d(self) -> int:
        return self.word_table.shape[1]

    @property
    def n_word_ids(self) -> int:
        return self.word_table.shape[0]

    @property
    def vocab_size(self) -> int:
        return self.n_word_ids + self.n_bin + 1

    def lookup(self, ids: torch.Tensor) -> torch.Tensor:
        """
        Embed vocabulary ids; ids at or above the word block read the magnitude table.

        Raises:
            IdOutOfBounds: If any id lies outside the vocabulary
        """
        if ids.numel() and (int(ids.min()) < 0 or int(ids.max()) >= self.vocab_size):
            raise IdOutOfBounds(f"Token id outside [0, {self.vocab_size})")
        is_magnitude = ids >= self.n_word_ids
        out = self.word_table[ids.clamp(max=self.n_word_ids - 1)]
        if bool(is_magnitude.any()):
            rows = self.magnitude_table[(ids - self.n_word_ids).clamp(min=0)]
            out = torch.where(is_magnitude.unsqueeze(-1), rows, out)
        return out

    def positions(self, position_ids: torch.Tensor) -> torch.Tensor:
        return self.position_table[position_ids]


class IntraFeatureAttention(nn.Module):
    """
    Multi-head self-attention over one feature's tokens, read at the CLS slot.

    Q = W_q(H + P), K = W_k(H + P), V = W_v(H) (or W_v(H + P) when
    value_position is set), scaled dot-product attention per head, heads
    concatenated and projected by W_o.
    """

    def __init__(self, d: int, n_heads: int):
        super().__init__()
        if d % n_heads != 0:
            raise ShapeMismatch(f"d={d} is not divisible by n_heads={n_heads}")
        self.d = d
        self.n_heads = n_heads
        self.head_dim = d // n_heads
        self.w_q = nn.Linear(d, d, bias=False)
        self.w_k = nn.Linear(d, d, bias=False)
        self.w_v = nn.Linear(d, d, bias=False)
        self.w_o = nn.Linear(d, d, bias=False)

    def _heads(self, x: torch.Tensor) -> torch.Tensor:
        # [..., L, d] -> [..., h, L, dh]
        return x.unflatten(-1, (self.n_heads, self.head_dim)).transpose(-3, -2)

    def forward(self, h: torch.Tensor, p: torch.Tensor, key_mask: Optional[torch.Tensor] = None,
                value_position: bool = False) -> torch.Tensor:
        """
        Args:
            h: Token embeddings [..., L, d]; slot 0 is the CLS token
            p: Position rows broadcastable to h
            key_mask: Optional bool [..., L], True for real tokens
            value_position: Add positions to the value projection as well

        Returns:
            CLS-slot output [..., d]
        """
        if h.shape[-1] != self.d:
            raise ShapeMismatch(f"Expected width {self.d}, got {h.shape[-1]}")
        hp = h + p
        q = self._heads(self.w_q(hp[..., :1, :]))
        k = self._heads(self.w_k(hp))
        v = self._heads(self.w_v(hp if value_position else h))

        scores = q @ k.transpose(-2, -1) / math.sqrt(self.head_dim)  # [..., h, 1, L]
        if key_mask is not None:
            scores = scores.masked_fill(~key_mask[..., None, None, :], float("-inf"))
        weights = torch.softmax(scores, dim=-1)
        out = (weights @ v).transpose(-3, -2).flatten(-2)  # [..., 1, d]
        return self.w_o(out).squeeze(-2)


@dataclass
class FeatureTokens:
    """
    Tokens of one feature of one row.

    Exactly one of ``magnitude`` (bin index, n_bin meaning MISSING) or
    ``text`` is set; numerical features use ``magnitude`` with l2 = 1.
    """

    name: TokenSequence
    magnitude: Optional[int] = None
    multiplier: float = 1.0
    text: Optional[TokenSequence] = None

    def __post_init__(self):
        if (self.magnitude is None) == (self.text is None):
            raise ConfigError("FeatureTokens needs exactly one of magnitude or text")

    @property
    def value_length(self) -> int:
        return 1 if self.magnitude is not None else len(self.text)


def embed_feature(ft: FeatureTokens, tables: EmbeddingTables) -> Tuple[torch.Tensor, torch.Tensor]:
    """
    Embed one feature as name rows followed by value rows.

    Args:
        ft: Feature tokens
        tables: Embedding tables

    Returns:
        ((l1 + l2) x d embedding matrix, position ids): names at 1..l1, values at 0.
        Names longer than tables.max_name_len are truncated.

    Raises:
        IdOutOfBounds: If a token id or bin index lies outside the tables
    """
    name_ids = torch.tensor(ft.name.ids[: tables.max_name_len], dtype=torch.long)
    if int(name_ids.max()) >= tables.n_word_ids or int(name_ids.min()) < 0:
        raise IdOutOfBounds("Feature-name token outside the word table")
    name_rows = tables.word_table[name_ids]

    if ft.magnitude is not None:
        if not (0 <= ft.magnitude <= tables.n_bin):
            raise IdOutOfBounds(f"Bin index {ft.magnitude} outside [0, {tables.n_bin}]")
        value_rows = (tables.magnitude_table[ft.magnitude] * ft.multiplier).unsqueeze(0)
    else:
        value_rows = tables.lookup(torch.tensor(ft.text.ids, dtype=torch.long))

    positions = torch.cat([
        torch.arange(1, len(name_ids) + 1, dtype=torch.long),
        torch.zeros(value_rows.shape[0], dtype=torch.long),
    ])
    return torch.cat([name_rows, value_rows], dim=0), positions


def ifa_fuse(e: torch.Tensor, positions: torch.Tensor, params: IntraFeatureAttention,
             tables: EmbeddingTables, value_position: bool = False) -> torch.Tensor:
    """
    Fuse one feature's token matrix into a single d-vector.

    Prepends the CLS embedding (position id 0) and returns the attention
    output at the CLS slot.

    Raises:
        ShapeMismatch: If e and positions disagree or widths differ
    """
    if e.dim() != 2 or e.shape[0] != positions.shape[0] or e.shape[1] != tables.d:
        raise ShapeMismatch(f"Feature matrix {tuple(e.shape)} vs {positions.shape[0]} positions")
    h = torch.cat([tables.cls_vector.unsqueeze(0), e], dim=0)
    pos = torch.cat([torch.zeros(1, dtype=torch.long), positions])
    return params(h, tables.positions(pos), value_position=value_position)


def fuse_sample(features: List[FeatureTokens], params: IntraFeatureAttention,
                tables: EmbeddingTables, value_position: bool = False) -> torch.Tensor:
    """
    Fuse every feature of a row and prepend the CLS embedding.

    Features are fused one at a time, so row i depends only on feature i's
    tokens. No sample-level position information is added.

    Returns:
        (1 + n) x d matrix, row 0 = CLS embedding
    """
    if not features:
        raise ShapeMismatch("A sample needs at least one feature")
    fused = [ifa_fuse(*embed_feature(ft, tables), params, tables, value_position) for ft in features]
    return torch.stack([tables.cls_vector, *fused], dim=0)
