"""
Helpers - Utility functions shared across tabtok

This module provides helper functions for:
- Saving and loading JSON artifacts (configs, reports, schemas)
- Seeding and the determinism switch
- Creating run directories (honouring TABTOK_RUN_DIR)
- Writing the JSON-lines training log
"""

import json
import os
from datetime import datetime
from pathlib import Path
from typing import Dict, Optional, Union

import numpy as np
import torch
from dotenv import load_dotenv
from transformers import enable_full_determinism, set_seed

RUN_DIR_ENV = "TABTOK_RUN_DIR"
DEFAULT_RUN_ROOT = "runs"


def _jsonable(obj):
    """json.dump fallback for numpy scalars/arrays and Paths."""
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"Object of type {type(obj).__name__} is not JSON serializable")


def save_json(data: Dict, filepath: Union[str, Path], quiet: bool = False):
    """
    Save a dictionary to a JSON file.

    Args:
        data: Dictionary to save
        filepath: Output file path (parent directories are created)
        quiet: Suppress the confirmation line
    """
    filepath = Path(filepath)
    filepath.parent.mkdir(parents=True, exist_ok=True)

    with open(filepath, 'w', encoding='utf-8') as f:
        json.dump(data, f, indent=2, ensure_ascii=False, default=_jsonable)

    if not quiet:
        print(f"✅ Saved {filepath}")


def load_json(filepath: Union[str, Path]) -> Dict:
    """
    Load a JSON file.

    Args:
        filepath: Path to the file

    Returns:
        Parsed JSON value

    Raises:
        FileNotFoundError: If file doesn't exist
        json.JSONDecodeError: If file is not valid JSON
    """
    filepath = Path(filepath)

    if not filepath.exists():
        raise FileNotFoundError(f"JSON file not found: {filepath}")

    with open(filepath, 'r', encoding='utf-8') as f:
        return json.load(f)


def seed_everything(seed: int, deterministic: bool = False):
    """
    Seed python, numpy and torch.

    With deterministic=True torch is additionally restricted to deterministic
    kernels, which makes repeated runs with the same seed bit-identical.
    """
    if deterministic:
        enable_full_determinism(seed, warn_only=True)
        torch.set_num_threads(1)
    else:
        set_seed(seed)


def resolve_run_root(explicit: Optional[str] = None) -> Path:
    """Output root: explicit argument, then TABTOK_RUN_DIR (also read from .env), then ./runs."""
    load_dotenv()
    if explicit:
        return Path(explicit)
    return Path(os.environ.get(RUN_DIR_ENV, DEFAULT_RUN_ROOT))


def make_run_dir(verb: str, root: Optional[str] = None) -> Path:
    """
    Create a fresh run directory ``<root>/<verb>-<timestamp>``.

    Args:
        verb: CLI verb that owns the run
        root: Optional output root overriding the environment

    Returns:
        Path to the created directory
    """
    base = resolve_run_root(root)
    stamp = datetime.now().strftime("%Y%m%d-%H%M%S-%f")
    run_dir = base / f"{verb}-{stamp}"
    run_dir.mkdir(parents=True, exist_ok=False)
    return run_dir


class JsonlLogger:
    """
    Append-only JSON-lines log.

    One JSON object per line; a logger without a path swallows records but
    still keeps them in memory, which the tests use.

    Examples:
        >>> log = JsonlLogger(None)
        >>> log.write(type="step", step=1, loss=0.7)
        >>> log.records[0]["loss"]
        0.7
    """

    def __init__(self, path: Optional[Union[str, Path]] = None):
        self.path = Path(path) if path is not None else None
        self.records = []
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)

    def write(self, **record):
        self.records.append(record)
        if self.path is not None:
            with open(self.path, 'a', encoding='utf-8') as f:
                f.write(json.dumps(record, default=_jsonable) + "\n")

    def __repr__(self):
        return f"JsonlLogger(path={self.path}, records={len(self.records)})"
