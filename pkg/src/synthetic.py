"""
Synthetic - Small labelled tables for desk-scale experiments

Tasks draw feature names from shared pools, and every name carries the same
meaning in every task: a numerical name always pushes the label in the same
direction, and a categorical value text always has the same polarity. That
shared structure is what a pre-trained trunk can transfer to a new task.

Label rules:
- linear-in-bins: the score is linear in each numerical feature's level
  (one of N_LEVELS equal-width slices of its range) plus categorical polarities
- categorical-lookup: the label is the polarity of the first categorical
  feature's value text
"""

import zlib
from dataclasses import asdict, dataclass
from enum import Enum
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from .errors import ConfigError, config_from_dict
from .table_store import ColumnSpec, Dataset, FeatureKind, FeatureSchema, TargetSpec, TaskType

N_LEVELS = 8

# (name, low, high)
NUMERIC_POOL: List[Tuple[str, float, float]] = [
    ("age", 18, 90),
    ("blood pressure", 80, 180),
    ("annual income", 10_000, 200_000),
    ("body mass index", 15, 45),
    ("heart rate", 40, 160),
    ("credit score", 300, 850),
    ("loan amount", 500, 50_000),
    ("hours per week", 1, 80),
    ("years employed", 0, 40),
    ("cholesterol level", 120, 320),
    ("account balance", -5_000, 50_000),
    ("number of dependents", 0, 8),
    ("glucose level", 60, 250),
    ("house size", 30, 400),
    ("distance to city", 0, 120),
    ("daily steps", 0, 25_000),
]

# (name, value with positive polarity, value with negative polarity)
CATEGORY_POOL: List[Tuple[str, str, str]] = [
    ("credit history", "good", "poor"),
    ("employment status", "employed", "unemployed"),
    ("owns home", "yes", "no"),
    ("education", "graduate", "dropout"),
    ("risk assessment", "low", "high"),
    ("payment record", "punctual", "late"),
    ("region", "urban", "rural"),
    ("contract type", "permanent", "temporary"),
]

_NUMERIC_RANGES: Dict[str, Tuple[float, float]] = {name: (lo, hi) for name, lo, hi in NUMERIC_POOL}


class LabelRule(str, Enum):
    LINEAR_IN_BINS = "linear-in-bins"
    CATEGORICAL_LOOKUP = "categorical-lookup"


def name_sign(name: str) -> float:
    """Direction (+1 / -1) in which a numerical name pushes the label, fixed across tasks."""
    return 1.0 if zlib.crc32(name.encode("utf-8")) % 2 == 0 else -1.0


@dataclass
class SyntheticTaskSpec:
    n_rows: int = 512
    n_num_features: int = 4
    n_cat_features: int = 2
    name_pool: Optional[List[str]] = None
    label_rule: LabelRule = LabelRule.LINEAR_IN_BINS
    task: TaskType = TaskType.BINCLASS
    noise: float = 0.0
    missing_rate: float = 0.0
    seed: int = 0
    name: Optional[str] = None

    def __post_init__(self):
        self.label_rule = LabelRule(self.label_rule)
        self.task = TaskType(self.task)
        self.validate()

    def validate(self):
        if self.n_num_features + self.n_cat_features < 1:
            raise ConfigError("A synthetic task needs at least one feature")
        if self.n_num_features < 0 or self.n_cat_features < 0 or self.n_rows < 1:
            raise ConfigError("Feature and row counts must be non-negative")
        if self.n_cat_features > len(CATEGORY_POOL):
            raise ConfigError(f"At most {len(CATEGORY_POOL)} categorical features are available")
        if self.label_rule == LabelRule.CATEGORICAL_LOOKUP and self.n_cat_features < 1:
            raise ConfigError("categorical-lookup needs at least one categorical feature")
        if self.label_rule == LabelRule.LINEAR_IN_BINS and self.n_num_features < 1:
            raise ConfigError("linear-in-bins needs at least one numerical feature")
        if not (0.0 <= self.noise <= 1.0) or not (0.0 <= self.missing_rate < 1.0):
            raise ConfigError("noise must lie in [0, 1] and missing_rate in [0, 1)")

    def to_dict(self) -> Dict:
        out = asdict(self)
        out["label_rule"] = self.label_rule.value
        out["task"] = self.task.value
        return out

    @classmethod
    def from_dict(cls, data: Dict) -> "SyntheticTaskSpec":
        return config_from_dict(cls, data)


def _numeric_names(spec: SyntheticTaskSpec, rng: np.random.Generator) -> List[str]:
    pool = list(spec.name_pool) if spec.name_pool else [name for name, _, _ in NUMERIC_POOL]
    picked = [pool[i] for i in rng.permutation(len(pool))[: spec.n_num_features]]
    picked += [f"measurement {i}" for i in range(spec.n_num_features - len(picked))]
    return picked


def gen_synthetic(spec: SyntheticTaskSpec) -> Dataset:
    """
    Generate a labelled table; the same spec always yields the same table.

    Binclass noise is a label-flip probability, so noise 0.5 makes labels
    independent of the features. Regression noise is the std of additive
    Gaussian noise on the score.

    Examples:
        >>> ds = gen_synthetic(SyntheticTaskSpec(n_rows=64, seed=3))
        >>> len(ds), len(ds.schema.columns)
        (64, 6)
    """
    rng = np.random.default_rng(spec.seed)
    n = spec.n_rows
    num_names = _numeric_names(spec, rng)
    cat_entries = [CATEGORY_POOL[i] for i in rng.permutation(len(CATEGORY_POOL))[: spec.n_cat_features]]

    columns: List[ColumnSpec] = []
    data: Dict[str, np.ndarray] = {}
    score = np.zeros(n)

    for name in num_names:
        lo, hi = _NUMERIC_RANGES.get(name, (0.0, 100.0))
        level = rng.integers(0, N_LEVELS, size=n)
        values = lo + (level + rng.random(n)) * (hi - lo) / N_LEVELS
        centred = (level - (N_LEVELS - 1) / 2) / ((N_LEVELS - 1) / 2)
        score += name_sign(name) * centred / np.sqrt(len(num_names))
        if spec.missing_rate > 0:
            values = np.where(rng.random(n) < spec.missing_rate, np.nan, values)
        columns.append(ColumnSpec(name=name, kind=FeatureKind.NUMERICAL))
        data[name] = values

    polarity = []
    for name, positive, negative in cat_entries:
        is_positive = rng.random(n) < 0.5
        polarity.append(np.where(is_positive, 1.0, -1.0))
        columns.append(ColumnSpec(name=name, kind=FeatureKind.CATEGORICAL,
                                  category_map={"0": negative, "1": positive}))
        data[name] = np.where(is_positive, positive, negative).astype(object)

    if spec.label_rule == LabelRule.CATEGORICAL_LOOKUP:
        score = polarity[0]
    elif polarity:
        score = score + 0.5 * np.mean(polarity, axis=0)

    if spec.task == TaskType.BINCLASS:
        labels = (score > 0).astype(np.float64)
        flip = rng.random(n) < spec.noise
        labels = np.where(flip, 1.0 - labels, labels)
    else:
        labels = score + spec.noise * rng.standard_normal(n)

    schema = FeatureSchema(columns=columns, target=TargetSpec(name="target", task=spec.task))
    frame = pd.DataFrame({c.name: data[c.name] for c in columns})
    return Dataset(schema=schema, frame=frame, labels=labels, name=spec.name or f"synthetic-{spec.seed}")
