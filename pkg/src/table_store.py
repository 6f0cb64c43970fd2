"""
Table Store - Schema-driven CSV ingestion and stratified splitting

This module provides:
- FeatureSchema / Dataset: typed tables whose categorical codes are already
  mapped to meaningful text (value "0" of "gender" becomes "male")
- load_csv / save_csv and schema JSON I/O
- split: (train, val, test) partitions with per-class proportional allocation
- validation_carveout: the small validation slice taken from pre-training data
- dataset_stats: per-table statistics (sizes, feature-type counts, alpha)

Missing numerical cells stay NaN and are encoded downstream by the reserved
MISSING magnitude token; missing categorical / string cells become "unknown".
"""

import json
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from .errors import (
    ClassTooSmall,
    ConfigError,
    EmptyFile,
    MalformedFile,
    MissingColumn,
    SchemaError,
    TargetMissing,
    TooFewRows,
)
from .helpers import load_json, save_json

MISSING_TEXT = "unknown"
_MISSING_RAW = {"", "na", "nan", "null", "?"}
_TRUE_LABELS = {"1", "1.0", "true", "yes", "y", "t"}
_FALSE_LABELS = {"0", "0.0", "false", "no", "n", "f"}


class FeatureKind(str, Enum):
    NUMERICAL = "numerical"
    CATEGORICAL = "categorical"
    STRING = "string"


class TaskType(str, Enum):
    BINCLASS = "binclass"
    REGRESSION = "regression"


@dataclass(frozen=True)
class ColumnSpec:
    name: str
    kind: FeatureKind
    category_map: Optional[Dict[str, str]] = None

    def to_dict(self) -> Dict:
        out = {"name": self.name, "kind": self.kind.value}
        if self.category_map is not None:
            out["category_map"] = dict(self.category_map)
        return out


@dataclass(frozen=True)
class TargetSpec:
    name: str
    task: TaskType


@dataclass
class FeatureSchema:
    """
    Column declarations for one table.

    The schema is always supplied (never inferred) so that categorical
    code -> text mappings are explicit.
    """

    columns: List[ColumnSpec]
    target: TargetSpec

    def __post_init__(self):
        self.validate()

    def validate(self):
        names = [c.name for c in self.columns]
        if not names:
            raise SchemaError("Schema declares no feature columns")
        if any(not n or not n.strip() for n in names):
            raise SchemaError("Column names must be non-empty")
        if len(set(names)) != len(names):
            raise SchemaError(f"Duplicate column names in schema: {names}")
        if not self.target.name:
            raise SchemaError("Target column name must be non-empty")
        if self.target.name in names:
            raise SchemaError(f"Target '{self.target.name}' must not also be a feature column")
        for col in self.columns:
            if col.kind == FeatureKind.CATEGORICAL and col.category_map is None:
                raise SchemaError(f"Categorical column '{col.name}' needs a category_map")

    @property
    def feature_names(self) -> List[str]:
        return [c.name for c in self.columns]

    @property
    def task(self) -> TaskType:
        return self.target.task

    def column(self, name: str) -> ColumnSpec:
        for col in self.columns:
            if col.name == name:
                return col
        raise KeyError(name)

    def names_of(self, kind: FeatureKind) -> List[str]:
        return [c.name for c in self.columns if c.kind == kind]

    def to_dict(self) -> Dict:
        return {
            "columns": [c.to_dict() for c in self.columns],
            "target": {"name": self.target.name, "task": self.target.task.value},
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "FeatureSchema":
        try:
            columns = [
                ColumnSpec(
                    name=str(c["name"]),
                    kind=FeatureKind(c["kind"]),
                    category_map=(
                        {str(k): str(v) for k, v in c["category_map"].items()}
                        if c.get("category_map") is not None else None
                    ),
                )
                for c in data["columns"]
            ]
            target = TargetSpec(name=str(data["target"]["name"]),
                                task=TaskType(data["target"]["task"]))
        except (AttributeError, KeyError, TypeError, ValueError) as e:
            raise SchemaError(f"Invalid schema JSON: {e}") from e
        return cls(columns=columns, target=target)


def load_schema(filepath: Union[str, Path]) -> FeatureSchema:
    """Load a sidecar schema JSON file."""
    try:
        data = load_json(filepath)
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise SchemaError(f"Schema file {filepath} is not valid JSON: {e}") from e
    return FeatureSchema.from_dict(data)


def save_schema(schema: FeatureSchema, filepath: Union[str, Path]):
    save_json(schema.to_dict(), filepath, quiet=True)


@dataclass
class Dataset:
    """
    A typed table.

    ``frame`` holds the feature columns in schema order: float64 (NaN = missing)
    for numerical columns and str for categorical / string columns. The frame
    index carries the original row ids, so splits can be checked as partitions.
    ``labels`` is float64: 0/1 for binclass, real values for regression.
    """

    schema: FeatureSchema
    frame: pd.DataFrame
    labels: np.ndarray
    name: str = "dataset"

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.float64)
        if len(self.frame) < 1:
            raise TooFewRows(f"Dataset '{self.name}' has no rows")
        if list(self.frame.columns) != self.schema.feature_names:
            raise SchemaError("Frame columns do not match schema feature columns")
        if len(self.labels) != len(self.frame):
            raise SchemaError("Label count does not match row count")

    def __len__(self) -> int:
        return len(self.frame)

    @property
    def task(self) -> TaskType:
        return self.schema.task

    @property
    def row_ids(self) -> np.ndarray:
        return self.frame.index.to_numpy()

    def subset(self, positions: Sequence[int], name: Optional[str] = None) -> "Dataset":
        positions = np.asarray(positions, dtype=np.int64)
        return Dataset(
            schema=self.schema,
            frame=self.frame.iloc[positions],
            labels=self.labels[positions],
            name=name or self.name,
        )

    def __repr__(self):
        return (f"Dataset(name={self.name!r}, rows={len(self)}, "
                f"features={len(self.schema.columns)}, task={self.task.value})")


# ---------------------------------------------------------------------------
# CSV I/O
# ---------------------------------------------------------------------------

def _is_missing_raw(value: str) -> bool:
    return value.strip().lower() in _MISSING_RAW


def _parse_binclass(raw: pd.Series) -> np.ndarray:
    lowered = raw.str.strip().str.lower()
    if lowered.isin(_TRUE_LABELS | _FALSE_LABELS).all():
        return lowered.isin(_TRUE_LABELS).to_numpy(dtype=np.float64)
    distinct = sorted(lowered.unique())
    if len(distinct) != 2:
        raise SchemaError(f"Binary target needs exactly two distinct values, got {distinct[:5]}")
    return (lowered == distinct[1]).to_numpy(dtype=np.float64)


def load_csv(filepath: Union[str, Path], schema: FeatureSchema,
             name: Optional[str] = None, quiet: bool = False) -> Dataset:
    """
    Load a CSV file against a declared schema.

    Args:
        filepath: Path to a UTF-8 CSV file with a header row
        schema: Column declarations (header order does not matter)
        name: Dataset id; defaults to the file stem
        quiet: Suppress the confirmation line

    Returns:
        Dataset with numerical cells parsed (unparseable -> NaN) and
        categorical cells replaced by their category_map text

    Raises:
        FileNotFoundError: If the file doesn't exist
        EmptyFile: If the file has no header or no data rows
        MissingColumn: If a schema feature column is absent
        TargetMissing: If the target column is absent
        SchemaError: If a categorical value has no mapping
    """
    filepath = Path(filepath)
    if not filepath.exists():
        raise FileNotFoundError(f"CSV file not found: {filepath}")

    try:
        raw = pd.read_csv(filepath, dtype=str, keep_default_na=False, encoding="utf-8")
    except pd.errors.EmptyDataError as e:
        raise EmptyFile(f"{filepath} is empty") from e
    except UnicodeDecodeError as e:
        raise MalformedFile(f"{filepath} is not UTF-8 text: {e}") from e
    except pd.errors.ParserError as e:
        raise MalformedFile(f"{filepath} is not well-formed CSV: {e}") from e
    if raw.empty:
        raise EmptyFile(f"{filepath} has a header but no rows")

    if schema.target.name not in raw.columns:
        raise TargetMissing(f"Target column '{schema.target.name}' not in {filepath.name}")
    for col in schema.columns:
        if col.name not in raw.columns:
            raise MissingColumn(col.name)

    extra = set(raw.columns) - set(schema.feature_names) - {schema.target.name}
    if extra and not quiet:
        print(f"⚠️  Ignoring {len(extra)} undeclared column(s): {', '.join(sorted(extra))}")

    target_raw = raw[schema.target.name]
    keep = ~target_raw.map(_is_missing_raw)
    if not keep.all():
        if not quiet:
            print(f"⚠️  Dropping {int((~keep).sum())} row(s) with a missing target")
        raw = raw[keep]
        target_raw = target_raw[keep]
    if raw.empty:
        raise EmptyFile(f"{filepath} has no rows with a target value")
    raw = raw.reset_index(drop=True)
    target_raw = target_raw.reset_index(drop=True)

    columns = {}
    for col in schema.columns:
        cells = raw[col.name]
        if col.kind == FeatureKind.NUMERICAL:
            values = pd.to_numeric(cells.str.strip(), errors="coerce").to_numpy(dtype=np.float64)
            values[~np.isfinite(values)] = np.nan
            columns[col.name] = values
        elif col.kind == FeatureKind.CATEGORICAL:
            columns[col.name] = [_map_category(col, v) for v in cells]
        else:
            columns[col.name] = [MISSING_TEXT if _is_missing_raw(v) else v.strip() for v in cells]
    frame = pd.DataFrame(columns, columns=schema.feature_names)

    if schema.task == TaskType.BINCLASS:
        labels = _parse_binclass(target_raw)
    else:
        labels = pd.to_numeric(target_raw.str.strip(), errors="coerce").to_numpy(dtype=np.float64)
        if not np.isfinite(labels).all():
            raise SchemaError(f"Regression target '{schema.target.name}' has non-numeric values")

    ds = Dataset(schema=schema, frame=frame, labels=labels, name=name or filepath.stem)
    if not quiet:
        print(f"✅ Loaded {len(ds)} rows from {filepath.name}")
    return ds


def _map_category(col: ColumnSpec, value: str) -> str:
    key = value.strip()
    if key in col.category_map:
        return col.category_map[key]
    if _is_missing_raw(key):
        return MISSING_TEXT
    raise SchemaError(f"Value '{key}' of categorical column '{col.name}' has no category_map entry")


def save_csv(ds: Dataset, filepath: Union[str, Path], quiet: bool = False):
    """
    Write a Dataset back to CSV using the raw codes of its schema.

    Categorical texts are mapped back through the inverse category_map and
    missing cells are written empty, so loading the file again yields the
    same cells.
    """
    filepath = Path(filepath)
    filepath.parent.mkdir(parents=True, exist_ok=True)

    out = {}
    for col in ds.schema.columns:
        series = ds.frame[col.name]
        if col.kind == FeatureKind.NUMERICAL:
            out[col.name] = ["" if np.isnan(v) else repr(float(v)) for v in series]
        elif col.kind == FeatureKind.CATEGORICAL:
            inverse = {}
            for raw_code, text in col.category_map.items():
                inverse.setdefault(text, raw_code)
            out[col.name] = [inverse.get(v, "" if v == MISSING_TEXT else v) for v in series]
        else:
            out[col.name] = list(series)
    if ds.task == TaskType.BINCLASS:
        out[ds.schema.target.name] = [str(int(v)) for v in ds.labels]
    else:
        out[ds.schema.target.name] = [repr(float(v)) for v in ds.labels]

    pd.DataFrame(out).to_csv(filepath, index=False, encoding="utf-8")
    if not quiet:
        print(f"✅ Wrote {len(ds)} rows to {filepath}")


# ---------------------------------------------------------------------------
# Splitting
# ---------------------------------------------------------------------------

@dataclass
class SplitSpec:
    ratios: Tuple[float, float, float] = (0.64, 0.16, 0.20)
    stratify: bool = True
    seed: int = 0

    def __post_init__(self):
        self.ratios = tuple(float(r) for r in self.ratios)
        self.validate()

    def validate(self):
        if len(self.ratios) != 3:
            raise ConfigError("SplitSpec needs exactly three ratios (train, val, test)")
        if any(not (0.0 < r < 1.0) for r in self.ratios):
            raise ConfigError(f"Every split fraction must lie in (0, 1), got {self.ratios}")
        if not math.isclose(sum(self.ratios), 1.0, abs_tol=1e-9):
            raise ConfigError(f"Split fractions must sum to 1, got {sum(self.ratios)}")
        if self.ratios[0] < max(self.ratios[1:]):
            raise ConfigError("Train fraction must be the largest")


def _largest_remainder(total: int, weights: Sequence[float]) -> List[int]:
    """Apportion ``total`` units proportionally to ``weights``; ties go to the earlier slot."""
    quotas = [total * w for w in weights]
    counts = [math.floor(q) for q in quotas]
    order = sorted(range(len(weights)), key=lambda i: (-(quotas[i] - counts[i]), i))
    for i in order[: total - sum(counts)]:
        counts[i] += 1
    return counts


def _stratified_allocation(class_sizes: Sequence[int], split_sizes: Sequence[int]) -> np.ndarray:
    """
    Integer matrix [class, split] for two classes whose rows sum to
    class_sizes and columns to split_sizes.

    Positives are apportioned by largest remainder against the exact quota
    n_pos * size_s / n, so every split's positive count is within one unit
    of its quota and |split rate - global rate| < 1 / |split|. Negatives
    fill the rest of each split.
    """
    n_neg, n_pos = (int(c) for c in class_sizes)
    n = n_neg + n_pos
    sizes = [int(s) for s in split_sizes]
    scaled = [n_pos * s for s in sizes]
    pos = [q // n for q in scaled]
    order = sorted(range(len(sizes)), key=lambda s: (-(scaled[s] % n), s))
    for s in order[: n_pos - sum(pos)]:
        pos[s] += 1
    return np.array([[size - p for size, p in zip(sizes, pos)], pos], dtype=np.int64)


def _partition(ds: Dataset, weights: Sequence[float], stratify: bool, seed: int) -> List[np.ndarray]:
    n = len(ds)
    rng = np.random.default_rng(seed)
    split_sizes = _largest_remainder(n, weights)

    if stratify and ds.task == TaskType.BINCLASS:
        groups = [np.flatnonzero(ds.labels == c) for c in (0.0, 1.0)]
        alloc = _stratified_allocation([len(g) for g in groups], split_sizes)
        parts: List[List[int]] = [[] for _ in weights]
        for c, members in enumerate(groups):
            shuffled = rng.permutation(members)
            bounds = np.cumsum(alloc[c])[:-1]
            for s, chunk in enumerate(np.split(shuffled, bounds)):
                parts[s].extend(chunk.tolist())
        return [np.sort(np.asarray(p, dtype=np.int64)) for p in parts]

    shuffled = rng.permutation(n)
    bounds = np.cumsum(split_sizes)[:-1]
    return [np.sort(chunk) for chunk in np.split(shuffled, bounds)]


def split(ds: Dataset, spec: SplitSpec) -> Tuple[Dataset, Dataset, Dataset]:
    """
    Partition a dataset into train / validation / test.

    Args:
        ds: Dataset with at least 10 rows
        spec: Ratios, stratification flag and seed

    Returns:
        (train, val, test) datasets; disjoint, covering all rows, sizes within
        one row of the ratios, deterministic for a given seed

    Raises:
        TooFewRows: If the dataset has fewer than 10 rows
        ClassTooSmall: If a class has fewer than 3 rows under stratification
    """
    if len(ds) < 10:
        raise TooFewRows(f"Need at least 10 rows to split, got {len(ds)}")
    if spec.stratify and ds.task == TaskType.BINCLASS:
        for c in (0.0, 1.0):
            count = int((ds.labels == c).sum())
            if count < 3:
                raise ClassTooSmall(f"Class {int(c)} has {count} rows; stratified split needs >= 3")

    train, val, test = _partition(ds, spec.ratios, spec.stratify, spec.seed)
    return ds.subset(train), ds.subset(val), ds.subset(test)


def validation_carveout(train: Dataset, frac: float = 0.05, seed: int = 0) -> Tuple[Dataset, Dataset]:
    """
    Carve a validation slice out of a training set.

    Args:
        train: Training dataset
        frac: Validation fraction in (0, 0.5]
        seed: Shuffle seed

    Returns:
        (remaining_train, validation) where validation has round(frac * N) rows;
        stratified for binclass, plain shuffle for regression

    Raises:
        TooFewRows: If either side would be empty
    """
    if not (0.0 < frac <= 0.5):
        raise ConfigError(f"Validation fraction must lie in (0, 0.5], got {frac}")
    n = len(train)
    n_val = math.floor(frac * n + 0.5)
    if n_val < 1 or n - n_val < 1:
        raise TooFewRows(f"Cannot carve {frac:.0%} validation rows out of {n} rows")

    rng = np.random.default_rng(seed)
    sizes = [n - n_val, n_val]
    if train.task == TaskType.BINCLASS:
        groups = [np.flatnonzero(train.labels == c) for c in (0.0, 1.0)]
        alloc = _stratified_allocation([len(g) for g in groups], sizes)
        parts: List[List[int]] = [[], []]
        for c, members in enumerate(groups):
            shuffled = rng.permutation(members)
            head, tail = np.split(shuffled, [alloc[c, 0]])
            parts[0].extend(head.tolist())
            parts[1].extend(tail.tolist())
        keep, val = (np.sort(np.asarray(p, dtype=np.int64)) for p in parts)
    else:
        shuffled = rng.permutation(n)
        keep, val = np.sort(shuffled[: sizes[0]]), np.sort(shuffled[sizes[0]:])
    return train.subset(keep), train.subset(val)


# ---------------------------------------------------------------------------
# Statistics
# ---------------------------------------------------------------------------

def dataset_stats(ds: Dataset) -> Dict:
    """
    Summary statistics of a table.

    Returns:
        Dict with row count, per-kind feature counts, the categorical /
        numerical ratio alpha (None without numerical features) and the
        positive rate (binclass) or target mean and std (regression)
    """
    n_num = len(ds.schema.names_of(FeatureKind.NUMERICAL))
    n_cat = len(ds.schema.names_of(FeatureKind.CATEGORICAL))
    stats = {
        "name": ds.name,
        "task": ds.task.value,
        "n_rows": len(ds),
        "n_numerical": n_num,
        "n_categorical": n_cat,
        "n_string": len(ds.schema.names_of(FeatureKind.STRING)),
        "alpha": (n_cat / n_num) if n_num else None,
        "missing_cells": int(ds.frame.isna().sum().sum()),
    }
    if ds.task == TaskType.BINCLASS:
        stats["positive_rate"] = float(ds.labels.mean())
    else:
        stats["target_mean"] = float(ds.labels.mean())
        stats["target_std"] = float(ds.labels.std())
    return stats
