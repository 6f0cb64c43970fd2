"""
Evaluation - Metrics, delta bucketing and magnitude-embedding geometry

This module provides functionality to:
- Score predictions (AUC for binclass, RMSE for regression)
- Compute the categorical / numerical feature ratio alpha of a table
- Bucket per-dataset score changes between two model arms by the 0.5% band
- Measure how well magnitude-token distances follow bin-index distances
"""

from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import torch
from scipy.stats import rankdata, spearmanr

from .errors import ConfigError, EmptyInput, LengthMismatch, SingleClass, UnpairedDataset, ZeroNumerical
from .table_store import FeatureKind, FeatureSchema, TaskType

# Changes within this band count as "no significant change".
DELTA_BAND = 0.005
_BAND_TOL = 1e-12


@dataclass
class MetricReport:
    """
    One scored model on one dataset.

    ``arm`` names how the model was initialised: pretrained, random-init,
    vocab-init, or an ablation tag.
    """

    dataset_id: str
    task: TaskType
    metric: str
    value: float
    split_sizes: Tuple[int, int, int] = (0, 0, 0)
    seed: int = 0
    arm: str = "pretrained"

    def __post_init__(self):
        self.task = TaskType(self.task)
        self.split_sizes = tuple(int(s) for s in self.split_sizes)
        if self.metric == "auc" and not (0.0 <= self.value <= 1.0):
            raise ConfigError(f"AUC must lie in [0, 1], got {self.value}")
        if self.metric == "rmse" and not self.value >= 0.0:
            raise ConfigError(f"RMSE must be >= 0, got {self.value}")

    def to_dict(self) -> Dict:
        out = asdict(self)
        out["task"] = self.task.value
        out["split_sizes"] = list(self.split_sizes)
        return out

    @classmethod
    def from_dict(cls, data: Dict) -> "MetricReport":
        return cls(**data)


@dataclass
class DeltaBucket:
    """
    Per-dataset changes of a variant against a base arm.

    avg_diff is the mean change over datasets outside the band; when every
    change is inside the band it is 0 and ``avg_defined`` is False.
    """

    n_within: int
    n_worse: int
    n_better: int
    avg_diff: float
    avg_defined: bool = True
    deltas: Dict[str, float] = field(default_factory=dict)

    @property
    def n_datasets(self) -> int:
        return self.n_within + self.n_worse + self.n_better

    def to_dict(self) -> Dict:
        return asdict(self)


def auc(scores: Sequence[float], labels: Sequence[float]) -> float:
    """
    Area under the ROC curve from average ranks (normalized Mann-Whitney U).

    Ties between a positive and a negative count 0.5.

    Raises:
        LengthMismatch: If scores and labels differ in length
        SingleClass: If only one class is present

    Examples:
        >>> auc([0.5, 0.5, 0.1], [1, 0, 0])
        0.75
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if scores.shape != labels.shape:
        raise LengthMismatch(f"{scores.size} scores vs {labels.size} labels")
    positive = labels == 1
    n_pos = int(positive.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SingleClass("AUC needs both classes present")

    ranks = rankdata(scores, method="average")
    u = ranks[positive].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def rmse(pred: Sequence[float], y: Sequence[float]) -> float:
    """
    Root mean squared error.

    Raises:
        LengthMismatch: If lengths differ
        EmptyInput: If both are empty
    """
    pred = np.asarray(pred, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if pred.shape != y.shape:
        raise LengthMismatch(f"{pred.size} predictions vs {y.size} targets")
    if pred.size == 0:
        raise EmptyInput("RMSE of zero elements is undefined")
    return float(np.sqrt(np.mean((pred - y) ** 2)))


def score(pred: np.ndarray, y: np.ndarray, task: TaskType) -> Tuple[str, float]:
    """(metric name, value) for a task: AUC on logits or RMSE on the target scale."""
    if TaskType(task) == TaskType.BINCLASS:
        return "auc", auc(pred, y)
    return "rmse", rmse(pred, y)


def alpha_stat(schema: FeatureSchema) -> float:
    """
    Ratio of categorical to numerical feature counts.

    Raises:
        ZeroNumerical: If the schema has no numerical feature
    """
    n_num = len(schema.names_of(FeatureKind.NUMERICAL))
    if n_num == 0:
        raise ZeroNumerical("alpha is undefined for a table without numerical features")
    return len(schema.names_of(FeatureKind.CATEGORICAL)) / n_num


def report_delta(base: MetricReport, variant: MetricReport) -> float:
    """
    Signed change of variant against base; positive always means better.

    AUC changes are absolute (0.01 = one percentage point). RMSE changes are
    relative to the base RMSE with the sign flipped; a zero base RMSE falls
    back to the negated absolute change.
    """
    if base.metric != variant.metric:
        raise UnpairedDataset(f"Cannot compare {base.metric} with {variant.metric} on '{base.dataset_id}'")
    if base.metric == "auc":
        return variant.value - base.value
    if base.value == 0:
        return -(variant.value - base.value)
    return -(variant.value - base.value) / base.value


def delta_buckets(base: List[MetricReport], variant: List[MetricReport]) -> DeltaBucket:
    """
    Bucket per-dataset changes by the 0.5% band.

    Args:
        base: Reports of the reference arm
        variant: Reports of the compared arm, one per dataset of ``base``

    Returns:
        DeltaBucket whose counts partition the paired datasets

    Raises:
        UnpairedDataset: If the dataset ids of both lists differ
    """
    base_by_id = {r.dataset_id: r for r in base}
    variant_by_id = {r.dataset_id: r for r in variant}
    if len(base_by_id) != len(base) or len(variant_by_id) != len(variant):
        raise UnpairedDataset("Duplicate dataset ids in a report list")
    if set(base_by_id) != set(variant_by_id):
        missing = sorted(set(base_by_id) ^ set(variant_by_id))
        raise UnpairedDataset(f"Reports are not paired by dataset id: {missing}")

    deltas = {d: report_delta(base_by_id[d], variant_by_id[d]) for d in sorted(base_by_id)}
    values = np.array(list(deltas.values()), dtype=np.float64)
    within = np.abs(values) <= DELTA_BAND + _BAND_TOL
    significant = values[~within]
    return DeltaBucket(
        n_within=int(within.sum()),
        n_worse=int((significant < 0).sum()),
        n_better=int((significant > 0).sum()),
        avg_diff=float(significant.mean()) if significant.size else 0.0,
        avg_defined=bool(significant.size),
        deltas=deltas,
    )


def render_delta_table(buckets: Dict[str, DeltaBucket]) -> str:
    """
    Aligned plain-text table, one row per variant.

    Examples:
        >>> print(render_delta_table({"value2str": DeltaBucket(1, 2, 0, -0.04)}))
        Variant    |Δ|≤0.5%  Δ<-0.5%  Δ>0.5%  Avg. diff.
        value2str         1        2       0      -4.00%
    """
    headers = ["|Δ|≤0.5%", "Δ<-0.5%", "Δ>0.5%", "Avg. diff."]
    width = max([len("Variant")] + [len(name) for name in buckets])
    lines = ["  ".join([f"{'Variant':<{width}}"] + headers)]
    for name, b in buckets.items():
        avg = f"{100 * b.avg_diff:.2f}%" if b.avg_defined else "n/a"
        cells = [str(b.n_within), str(b.n_worse), str(b.n_better), avg]
        lines.append("  ".join([f"{name:<{width}}"] + [f"{c:>{len(h)}}" for c, h in zip(cells, headers)]))
    return "\n".join(lines)


@dataclass
class GeometryReport:
    spearman: float
    degenerate: bool
    pairs: List[Tuple[int, int, float]]

    def to_dict(self) -> Dict:
        return {"spearman": self.spearman, "degenerate": self.degenerate,
                "pairs": [list(p) for p in self.pairs]}


@torch.no_grad()
def magnitude_geometry_report(tables, reg_head: Optional[torch.nn.Module], sample_pairs: int = 1000,
                              seed: int = 0) -> GeometryReport:
    """
    Rank correlation between bin-index gaps and magnitude-embedding distances.

    Args:
        tables: EmbeddingTables (the MISSING row is never sampled)
        reg_head: Projection f applied before measuring distances; None for identity
        sample_pairs: Number of (k_a, k_b) pairs with k_a != k_b, at least 10
        seed: Pair sampling seed

    Returns:
        GeometryReport with the Spearman correlation and the raw
        (k_a, k_b, distance) pairs. Constant gaps or distances give
        spearman 0 with ``degenerate`` set.
    """
    if sample_pairs < 10:
        raise ConfigError(f"sample_pairs must be >= 10, got {sample_pairs}")
    n_bin = tables.n_bin
    rng = np.random.default_rng(seed)
    k_a = rng.integers(0, n_bin, size=sample_pairs)
    k_b = (k_a + rng.integers(1, n_bin, size=sample_pairs)) % n_bin

    rows = tables.magnitude_table[:n_bin]
    f = reg_head(rows) if reg_head is not None else rows
    dist = torch.linalg.vector_norm(f[k_a] - f[k_b], dim=-1).double().numpy()
    gaps = np.abs(k_a - k_b)

    pairs = [(int(a), int(b), float(d)) for a, b, d in zip(k_a, k_b, dist)]
    if np.ptp(dist) == 0 or np.ptp(gaps) == 0:
        return GeometryReport(spearman=0.0, degenerate=True, pairs=pairs)
    rho = spearmanr(gaps, dist)[0]
    return GeometryReport(spearman=float(rho), degenerate=False, pairs=pairs)


def plot_geometry(report: GeometryReport, filepath: Union[str, Path], n_bin: Optional[int] = None):
    """Scatter of bin-index gap against embedding distance, saved as an image."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    gaps = [abs(a - b) for a, b, _ in report.pairs]
    dists = [d for _, _, d in report.pairs]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.scatter(gaps, dists, s=6, alpha=0.5)
    ax.set_xlabel("|k_a - k_b|" + (f" (n_bin={n_bin})" if n_bin else ""))
    ax.set_ylabel("embedding distance")
    ax.set_title(f"Magnitude geometry, spearman={report.spearman:.3f}")
    fig.tight_layout()
    fig.savefig(filepath, dpi=120)
    plt.close(fig)
    print(f"✅ Saved {filepath}")


def calculate_metrics(reports: List[MetricReport]) -> Dict[str, float]:
    """
    Aggregate statistics of a list of reports (all of one metric).

    Returns:
        Dictionary of metrics
    """
    values = [r.value for r in reports]
    return {
        'mean': float(np.mean(values)),
        'median': float(np.median(values)),
        'std': float(np.std(values)),
        'min': float(np.min(values)),
        'max': float(np.max(values)),
        'num_evaluated': len(values),
    }


def compare_arms(arm_reports: Dict[str, List[MetricReport]]) -> Dict[str, Dict[str, float]]:
    """Aggregate metrics for each arm."""
    return {arm: calculate_metrics(reports) for arm, reports in arm_reports.items()}
