"""Binary checkpoint: versioned header, JSON metadata, named float32 tensors, SHA-256 trailer.

Layout (all integers little-endian)::

    b"LSNT" | u32 version | u32 meta_len | meta (UTF-8 JSON)
    | u32 n_tensors | n_tensors * (u16 name_len | name | u8 ndim | ndim * u32 dim | float32 data)
    | 32-byte SHA-256 of everything before it
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from pathlib import Path

import numpy as np

from .model import ModelConfig, ModelParams
from .trainer import Center, TrainConfig, TrainedModel
from .vocab import Vocab

MAGIC = b"LSNT"
VERSION = 1
_DIGEST = 32


class CheckpointError(ValueError):
    pass


def _pack_tensor(name: str, arr: np.ndarray) -> bytes:
    raw = name.encode("utf-8")
    data = np.ascontiguousarray(arr, dtype="<f4")
    head = struct.pack("<H", len(raw)) + raw + struct.pack("<B", data.ndim)
    head += struct.pack(f"<{data.ndim}I", *data.shape)
    return head + data.tobytes()


def dumps(trained: TrainedModel, extra: dict | None = None) -> bytes:
    meta = {
        "vocab": trained.vocab.keys(),
        "model": trained.model_config.to_dict(),
        "train": trained.train_config.to_dict(),
        "center": [float(x) for x in trained.center.c],
        "center_epoch": trained.center.computed_at_epoch,
        "loss_curve": trained.loss_curve,
        "extra": extra or {},
    }
    meta_raw = json.dumps(meta, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<II", VERSION, len(meta_raw)), meta_raw,
             struct.pack("<I", len(trained.params.tensors))]
    for name in sorted(trained.params.tensors):
        parts.append(_pack_tensor(name, trained.params.tensors[name]))
    body = b"".join(parts)
    return body + hashlib.sha256(body).digest()


def save(path: str | os.PathLike, trained: TrainedModel, extra: dict | None = None) -> None:
    blob = dumps(trained, extra)
    tmp = Path(str(path) + ".tmp")
    tmp.write_bytes(blob)
    os.replace(tmp, path)


def loads(blob: bytes) -> tuple[TrainedModel, dict]:
    """Parse a checkpoint; returns the model and the ``extra`` metadata block."""
    if len(blob) < len(MAGIC) + 8 + _DIGEST or blob[:4] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    body, digest = blob[:-_DIGEST], blob[-_DIGEST:]
    version, meta_len = struct.unpack_from("<II", body, 4)
    if version != VERSION:
        raise CheckpointError(f"checkpoint format version {version} is not supported (expected {VERSION})")
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError("checkpoint checksum mismatch; file is corrupted")
    off = 12
    meta = json.loads(body[off:off + meta_len].decode("utf-8"))
    off += meta_len
    (n_tensors,) = struct.unpack_from("<I", body, off)
    off += 4
    tensors = {}
    for _ in range(n_tensors):
        (name_len,) = struct.unpack_from("<H", body, off)
        off += 2
        name = body[off:off + name_len].decode("utf-8")
        off += name_len
        (ndim,) = struct.unpack_from("<B", body, off)
        off += 1
        shape = struct.unpack_from(f"<{ndim}I", body, off)
        off += 4 * ndim
        count = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(body, dtype="<f4", count=count, offset=off).reshape(shape)
        off += 4 * count
        tensors[name] = arr.astype(np.float32)
    if off != len(body):
        raise CheckpointError("trailing bytes after tensor section")
    cfg = ModelConfig(**{**meta["model"], "dtype": "float32"})
    params = ModelParams(cfg, tensors)
    params.validate()
    vocab = Vocab(meta["vocab"])
    train_cfg = TrainConfig(**meta["train"])
    center = Center(np.asarray(meta["center"], dtype=np.float64), meta["center_epoch"])
    return TrainedModel(params, center, vocab, train_cfg, meta["loss_curve"]), meta["extra"]


def load(path: str | os.PathLike) -> tuple[TrainedModel, dict]:
    return loads(Path(path).read_bytes())
