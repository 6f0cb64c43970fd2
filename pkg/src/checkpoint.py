"""
Checkpoint - Self-contained model snapshots

A checkpoint is a directory holding two files:

    manifest.json   format tag, version, model config, vocabulary, per-head
                    metadata (task, target scaling, bins), training counters,
                    tensor index and a SHA-256 of tensors.bin
    tensors.bin     named float32 tensors, little-endian, row-major

tensors.bin layout:

    b"TTOK" | u32 version | u32 count | count x record
    record = u16 name_len | name (utf-8) | u8 dtype (0 = f32) | u8 ndim | ndim x u32 dims | data

Saving is deterministic, so save -> load -> save reproduces both files
byte for byte.
"""

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Union

import numpy as np
import torch

from .discretizer import boundaries_from_json, boundaries_to_json
from .errors import CorruptFile, VersionMismatch
from .model import ModelConfig, TabTokModel, TargetScaler
from .table_store import TaskType
from .text_codec import Vocabulary

FORMAT = "tabtok-checkpoint"
VERSION = 1
MAGIC = b"TTOK"
MANIFEST_FILE = "manifest.json"
TENSORS_FILE = "tensors.bin"
_DTYPE_F32 = 0


@dataclass
class Checkpoint:
    """
    Everything needed to rebuild a TabTokModel.

    ``heads`` is ordered; each entry holds the head id, its task, target
    scaling and the bins fitted on that dataset's training split.
    """

    config: ModelConfig
    vocab: Vocabulary
    tensors: Dict[str, torch.Tensor]
    heads: List[Dict] = field(default_factory=list)
    step: int = 0
    epoch: int = 0
    best_val_loss: Optional[float] = None
    history: List[Dict] = field(default_factory=list)

    @classmethod
    def from_model(cls, model: TabTokModel, **counters) -> "Checkpoint":
        tensors = {name: t.detach().to(torch.float32).clone() for name, t in model.state_dict().items()}
        heads = []
        for head_id in model.heads.keys():
            scaler = model.target_scalers[head_id]
            heads.append({
                "id": head_id,
                "task": model.head_tasks[head_id].value,
                "target_mean": scaler.mean,
                "target_std": scaler.std,
                "bins": boundaries_to_json(model.bins.get(head_id, {})),
            })
        return cls(config=model.config, vocab=model.vocab, tensors=tensors, heads=heads, **counters)

    def build_model(self, with_heads: bool = True) -> TabTokModel:
        """Instantiate the network and load every stored tensor into it."""
        model = TabTokModel(self.config, self.vocab)
        state = dict(self.tensors)
        if with_heads:
            for head in self.heads:
                model.add_head(head["id"], TaskType(head["task"]),
                               TargetScaler(head["target_mean"], head["target_std"]),
                               boundaries_from_json(head["bins"]))
        else:
            state = {k: v for k, v in state.items() if not k.startswith("heads.")}
        model.load_state_dict(state, strict=True)
        return model


def _tensor_bytes(tensors: Dict[str, torch.Tensor]) -> bytes:
    chunks = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, t in tensors.items():
        encoded = name.encode("utf-8")
        data = np.ascontiguousarray(t.detach().cpu().to(torch.float32).numpy(), dtype="<f4")
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<BB", _DTYPE_F32, data.ndim))
        chunks.append(struct.pack(f"<{data.ndim}I", *data.shape))
        chunks.append(data.tobytes())
    return b"".join(chunks)


def _parse_tensors(blob: bytes) -> Dict[str, torch.Tensor]:
    try:
        if blob[:4] != MAGIC:
            raise CorruptFile("tensors.bin has a bad magic header")
        version, count = struct.unpack_from("<II", blob, 4)
        if version != VERSION:
            raise VersionMismatch(f"tensors.bin version {version}, expected {VERSION}")
        offset = 12
        tensors = {}
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", blob, offset)
            offset += 2
            name = blob[offset: offset + name_len].decode("utf-8")
            offset += name_len
            dtype, ndim = struct.unpack_from("<BB", blob, offset)
            offset += 2
            if dtype != _DTYPE_F32:
                raise CorruptFile(f"Tensor '{name}' has unknown dtype code {dtype}")
            shape = struct.unpack_from(f"<{ndim}I", blob, offset)
            offset += 4 * ndim
            nbytes = 4 * int(np.prod(shape, dtype=np.int64))
            if offset + nbytes > len(blob):
                raise CorruptFile(f"Tensor '{name}' is truncated")
            data = np.frombuffer(blob, dtype="<f4", count=nbytes // 4, offset=offset).reshape(shape)
            tensors[name] = torch.from_numpy(data.astype(np.float32))
            offset += nbytes
    except struct.error as e:
        raise CorruptFile(f"tensors.bin is truncated: {e}") from e
    if offset != len(blob):
        raise CorruptFile("tensors.bin has trailing bytes")
    return tensors


def save_checkpoint(ckpt: Checkpoint, path: Union[str, Path], quiet: bool = False) -> Path:
    """
    Write a checkpoint directory.

    Args:
        ckpt: Checkpoint to save
        path: Target directory (created if needed)
        quiet: Suppress the confirmation line

    Returns:
        The checkpoint directory
    """
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    blob = _tensor_bytes(ckpt.tensors)
    manifest = {
        "format": FORMAT,
        "version": VERSION,
        "config": ckpt.config.to_dict(),
        "vocab": ckpt.vocab.to_json(),
        "heads": ckpt.heads,
        "step": ckpt.step,
        "epoch": ckpt.epoch,
        "best_val_loss": ckpt.best_val_loss,
        "history": ckpt.history,
        "tensors": [{"name": n, "shape": list(t.shape)} for n, t in ckpt.tensors.items()],
        "tensors_sha256": hashlib.sha256(blob).hexdigest(),
    }
    (path / TENSORS_FILE).write_bytes(blob)
    with open(path / MANIFEST_FILE, "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True, ensure_ascii=False)
    if not quiet:
        print(f"✅ Saved checkpoint ({len(ckpt.tensors)} tensors) to {path}")
    return path


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    """
    Read a checkpoint directory.

    Raises:
        FileNotFoundError: If the directory or one of its files is missing
        VersionMismatch: If the stored format version differs from this build's
        CorruptFile: If the manifest is unreadable or the tensor checksum fails
    """
    path = Path(path)
    manifest_path, tensors_path = path / MANIFEST_FILE, path / TENSORS_FILE
    for p in (manifest_path, tensors_path):
        if not p.exists():
            raise FileNotFoundError(f"Checkpoint file not found: {p}")

    try:
        with open(manifest_path, "r", encoding="utf-8") as f:
            manifest = json.load(f)
    except json.JSONDecodeError as e:
        raise CorruptFile(f"Unreadable manifest {manifest_path}: {e}") from e
    if manifest.get("format") != FORMAT:
        raise CorruptFile(f"{manifest_path} is not a tabtok checkpoint")
    if manifest.get("version") != VERSION:
        raise VersionMismatch(f"Checkpoint version {manifest.get('version')}, expected {VERSION}")

    blob = tensors_path.read_bytes()
    if hashlib.sha256(blob).hexdigest() != manifest.get("tensors_sha256"):
        raise CorruptFile(f"Checksum mismatch for {tensors_path}")
    tensors = _parse_tensors(blob)

    return Checkpoint(
        config=ModelConfig.from_dict(manifest["config"]),
        vocab=Vocabulary.from_json(manifest["vocab"]),
        tensors=tensors,
        heads=manifest["heads"],
        step=manifest["step"],
        epoch=manifest["epoch"],
        best_val_loss=manifest["best_val_loss"],
        history=manifest["history"],
    )
