"""Shared fixtures: small tables and a tiny model configuration."""

import numpy as np
import pandas as pd
import pytest
import torch

from src.discretizer import BinConfig
from src.model import ModelConfig
from src.synthetic import SyntheticTaskSpec, gen_synthetic
from src.table_store import ColumnSpec, Dataset, FeatureKind, FeatureSchema, TargetSpec, TaskType


@pytest.fixture(autouse=True)
def _seed_torch():
    torch.manual_seed(0)


@pytest.fixture
def mixed_schema() -> FeatureSchema:
    return FeatureSchema(
        columns=[
            ColumnSpec("blood pressure", FeatureKind.NUMERICAL),
            ColumnSpec("age", FeatureKind.NUMERICAL),
            ColumnSpec("smoker", FeatureKind.CATEGORICAL, {"0": "no", "1": "yes"}),
            ColumnSpec("notes", FeatureKind.STRING),
        ],
        target=TargetSpec("disease", TaskType.BINCLASS),
    )


@pytest.fixture
def mixed_dataset(mixed_schema) -> Dataset:
    rng = np.random.default_rng(0)
    n = 60
    bp = rng.uniform(90, 170, n)
    age = rng.integers(20, 80, n).astype(float)
    age[3] = np.nan
    smoker = np.where(rng.random(n) < 0.5, "yes", "no")
    notes = np.where(rng.random(n) < 0.5, "mild cough", "no complaints")
    labels = (bp > 130).astype(float)
    frame = pd.DataFrame({"blood pressure": bp, "age": age, "smoker": smoker, "notes": notes})
    return Dataset(mixed_schema, frame, labels, name="clinic")


@pytest.fixture
def tiny_config() -> ModelConfig:
    return ModelConfig(d=8, n_heads=2, n_layers=2, d_ff=16, dropout=0.0, head_dropout=0.0,
                       max_name_len=4, max_value_len=3, max_words=64,
                       bin=BinConfig(n_bin=8, min_leaf_size=2))


@pytest.fixture
def synthetic_binclass() -> Dataset:
    return gen_synthetic(SyntheticTaskSpec(n_rows=200, n_num_features=3, n_cat_features=2, seed=1))
