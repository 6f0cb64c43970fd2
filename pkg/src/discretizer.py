"""
Discretizer - Target-aware C4.5 binning of numerical features

Each numerical feature is discretized by growing a one-feature decision tree
on the training data with the information-gain criterion. The tree grows
best-first: the leaf whose best threshold gains most is split next, until
n_bin leaves exist, no split gains anything, or a child would fall below
min_leaf_size rows. Leaf boundaries become bin edges; a value's bin index is
the relative magnitude token it maps to.

Regression targets are bucketed into quantile classes first so the entropy
criterion has class labels to work with.
"""

import heapq
import math
from dataclasses import asdict, dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigError, EmptyInput, LengthMismatch, config_from_dict
from .table_store import Dataset, FeatureKind, TaskType

# Gains closer than this are treated as equal (lowest threshold wins).
GAIN_TOL = 1e-12


@dataclass
class BinConfig:
    n_bin: int = 256
    min_leaf_size: int = 16
    regression_target_bins: int = 2

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.n_bin < 2:
            raise ConfigError(f"n_bin must be >= 2, got {self.n_bin}")
        if self.min_leaf_size < 1:
            raise ConfigError(f"min_leaf_size must be >= 1, got {self.min_leaf_size}")
        if self.regression_target_bins < 2:
            raise ConfigError("regression_target_bins must be >= 2")

    def to_dict(self) -> Dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict) -> "BinConfig":
        return config_from_dict(cls, data)


@dataclass(frozen=True)
class BinBoundaries:
    """
    Fitted bin edges of one numerical feature.

    ``interior`` holds the strictly increasing split thresholds; the full edge
    vector brackets them with -inf / +inf, so a feature with L leaves has
    L - 1 interior thresholds.
    """

    interior: Tuple[float, ...]
    feature_min: float
    feature_max: float

    def __post_init__(self):
        if any(b <= a for a, b in zip(self.interior, self.interior[1:])):
            raise ConfigError("Bin edges must be strictly increasing")

    @property
    def edges(self) -> List[float]:
        return [-math.inf, *self.interior, math.inf]

    @property
    def n_leaves(self) -> int:
        return len(self.interior) + 1

    def to_json(self) -> Dict:
        return {"edges": list(self.interior), "min": self.feature_min, "max": self.feature_max}

    @classmethod
    def from_json(cls, data: Dict) -> "BinBoundaries":
        return cls(interior=tuple(float(e) for e in data["edges"]),
                   feature_min=float(data["min"]), feature_max=float(data["max"]))


def _entropy(counts: np.ndarray) -> np.ndarray:
    """Shannon entropy (bits) along the last axis of a class-count array."""
    totals = counts.sum(axis=-1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        p = np.where(totals > 0, counts / np.maximum(totals, 1), 0.0)
        terms = np.where(p > 0, -p * np.log2(np.where(p > 0, p, 1.0)), 0.0)
    return terms.sum(axis=-1)


def information_gains(sorted_values: np.ndarray, prefix: np.ndarray, lo: int, hi: int,
                      min_leaf_size: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    Information gain of every admissible cut of the node [lo, hi).

    Args:
        sorted_values: Feature values in ascending order
        prefix: Cumulative one-hot class counts, shape [N + 1, n_classes]
        lo, hi: Node row range in sorted order
        min_leaf_size: Smallest admissible child

    Returns:
        (cut_positions, gains); a cut at position i puts rows [lo, i) left.
        Only cuts between distinct adjacent values are admissible.
    """
    positions = np.arange(lo + min_leaf_size, hi - min_leaf_size + 1)
    if positions.size == 0:
        return positions, np.empty(0)
    positions = positions[sorted_values[positions - 1] < sorted_values[positions]]
    if positions.size == 0:
        return positions, np.empty(0)

    n = hi - lo
    parent = prefix[hi] - prefix[lo]
    left = prefix[positions] - prefix[lo]
    right = parent - left
    n_left = (positions - lo).astype(np.float64)
    gains = _entropy(parent) - (n_left * _entropy(left) + (n - n_left) * _entropy(right)) / n
    return positions, gains


def _cut_point(below: float, above: float) -> float:
    """Midpoint of two adjacent distinct values, or ``above`` when the midpoint rounds down onto ``below``."""
    mid = (below + above) / 2.0
    return float(above) if mid <= below else float(mid)


def best_cut(positions: np.ndarray, gains: np.ndarray) -> Optional[int]:
    """Index into ``positions`` of the best cut; near-ties go to the lowest threshold."""
    if gains.size == 0:
        return None
    top = gains.max()
    if top <= GAIN_TOL:
        return None
    return int(np.flatnonzero(gains >= top - GAIN_TOL)[0])


def fit_bins(values: Sequence[float], labels: Sequence[int], cfg: Optional[BinConfig] = None) -> BinBoundaries:
    """
    Fit C4.5 bin boundaries for one feature.

    Args:
        values: Finite training values of the feature
        labels: Class ids aligned with ``values`` (regression targets pre-bucketed)
        cfg: Bin budget and minimum leaf size

    Returns:
        BinBoundaries with at most cfg.n_bin leaves

    Raises:
        EmptyInput: If no values are given
        LengthMismatch: If values and labels differ in length

    Examples:
        >>> fit_bins([1, 2, 3, 4], [0, 0, 1, 1], BinConfig(min_leaf_size=1)).interior
        (2.5,)
    """
    cfg = cfg or BinConfig()
    values = np.asarray(values, dtype=np.float64)
    labels = np.asarray(labels)
    if values.size == 0:
        raise EmptyInput("fit_bins needs at least one value")
    if values.shape != labels.shape:
        raise LengthMismatch(f"{values.size} values vs {labels.size} labels")

    order = np.argsort(values, kind="stable")
    sorted_values = values[order]
    _, class_ids = np.unique(labels[order], return_inverse=True)
    onehot = np.eye(int(class_ids.max()) + 1)[class_ids]
    prefix = np.vstack([np.zeros((1, onehot.shape[1])), np.cumsum(onehot, axis=0)])

    thresholds: List[float] = []
    heap: List[Tuple[float, float, int, int, int]] = []

    def push(lo: int, hi: int):
        positions, gains = information_gains(sorted_values, prefix, lo, hi, cfg.min_leaf_size)
        choice = best_cut(positions, gains)
        if choice is not None:
            heapq.heappush(heap, (-gains[choice], sorted_values[lo], lo, hi, int(positions[choice])))

    push(0, values.size)
    n_leaves = 1
    while heap and n_leaves < cfg.n_bin:
        _, _, lo, hi, cut = heapq.heappop(heap)
        thresholds.append(_cut_point(sorted_values[cut - 1], sorted_values[cut]))
        n_leaves += 1
        push(lo, cut)
        push(cut, hi)

    return BinBoundaries(interior=tuple(sorted(thresholds)),
                         feature_min=float(sorted_values[0]),
                         feature_max=float(sorted_values[-1]))


def bin_index(b: BinBoundaries, x: float) -> int:
    """
    Bin of a finite value: k with e_k <= x < e_{k+1}, clamped to [0, L).

    Examples:
        >>> b = BinBoundaries((2.5,), 1.0, 4.0)
        >>> bin_index(b, 1.0), bin_index(b, 2.5)
        (0, 1)
    """
    return int(np.searchsorted(np.asarray(b.interior), x, side="right"))


def bin_indices(b: BinBoundaries, xs: np.ndarray) -> np.ndarray:
    """Vectorized bin_index."""
    return np.searchsorted(np.asarray(b.interior, dtype=np.float64),
                           np.asarray(xs, dtype=np.float64), side="right")


def value_multiplier(b: BinBoundaries, x: float) -> float:
    """
    Scale factor in [0.5, 1.5] applied to the magnitude-token embedding.

    0.5 at the training minimum, 1.5 at the training maximum, linear in
    between and clamped outside; 1.0 for a constant training feature.
    """
    return float(value_multipliers(b, np.asarray([x]))[0])


def value_multipliers(b: BinBoundaries, xs: np.ndarray) -> np.ndarray:
    """Vectorized value_multiplier."""
    xs = np.asarray(xs, dtype=np.float64)
    span = b.feature_max - b.feature_min
    if span <= 0:
        return np.ones_like(xs)
    return 0.5 + np.clip((xs - b.feature_min) / span, 0.0, 1.0)


def bucket_regression_target(y: Sequence[float], n_buckets: int = 2) -> np.ndarray:
    """
    Quantile classes for a real-valued target.

    With the default two buckets this is a median split: values at or above
    the median go to class 1.
    """
    y = np.asarray(y, dtype=np.float64)
    cuts = np.quantile(y, [i / n_buckets for i in range(1, n_buckets)])
    return np.searchsorted(cuts, y, side="right")


def class_labels_for(ds: Dataset, cfg: BinConfig) -> np.ndarray:
    if ds.task == TaskType.BINCLASS:
        return ds.labels.astype(np.int64)
    return bucket_regression_target(ds.labels, cfg.regression_target_bins)


def fit_table_bins(ds: Dataset, cfg: Optional[BinConfig] = None) -> Dict[str, BinBoundaries]:
    """
    Fit boundaries for every numerical feature of a training table.

    Missing cells are skipped; a feature with no observed value gets a single
    leaf.

    Args:
        ds: Training dataset
        cfg: Bin configuration

    Returns:
        Mapping feature name -> BinBoundaries
    """
    cfg = cfg or BinConfig()
    labels = class_labels_for(ds, cfg)
    bins = {}
    for name in ds.schema.names_of(FeatureKind.NUMERICAL):
        column = ds.frame[name].to_numpy(dtype=np.float64)
        observed = ~np.isnan(column)
        if not observed.any():
            bins[name] = BinBoundaries(interior=(), feature_min=0.0, feature_max=0.0)
            continue
        bins[name] = fit_bins(column[observed], labels[observed], cfg)
    return bins


def boundaries_to_json(bins: Dict[str, BinBoundaries]) -> Dict:
    return {name: b.to_json() for name, b in bins.items()}


def boundaries_from_json(data: Dict) -> Dict[str, BinBoundaries]:
    return {name: BinBoundaries.from_json(b) for name, b in data.items()}
