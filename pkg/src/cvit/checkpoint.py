"""Checkpoint container: a text header followed by raw little-endian float32 blobs.

Layout::

    CVITCKPT v<version> <header_bytes> <sha256 of header>\\n
    <JSON header: format_version, config, epoch, metrics, optimizer, tensor index>
    <blob 0><blob 1>...

Each index entry carries name, shape, offset, byte length and SHA-256 of
its blob, so any damaged byte is attributed to a tensor (or the header).
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional

import numpy as np

from .errors import CheckpointError, DimensionError, FormatVersionError, IntegrityError
from .model import CViTConfig, CViTModel, init_parameters
from .train import AdamState

FORMAT_VERSION = 1
MAGIC = b"CVITCKPT"
_DTYPE = np.dtype("<f4")


@dataclass
class Checkpoint:
    format_version: int
    config: CViTConfig
    tensors: Dict[str, np.ndarray]
    epoch: Optional[int] = None
    metrics: Optional[dict] = None
    optimizer: Optional[AdamState] = None
    extra: dict = field(default_factory=dict)


def save_checkpoint(model: CViTModel, path, optimizer: Optional[AdamState] = None,
                    epoch: Optional[int] = None, metrics: Optional[dict] = None,
                    state: Optional[Dict[str, np.ndarray]] = None, extra: Optional[dict] = None) -> None:
    """Write ``state`` (default: the model's own) atomically to ``path``."""
    tensors = dict(state if state is not None else model.state_dict())
    opt_meta = None
    if optimizer is not None:
        opt_meta = {"t": optimizer.t, "learning_rate": optimizer.learning_rate,
                    "weight_decay": optimizer.weight_decay, "beta1": optimizer.beta1,
                    "beta2": optimizer.beta2, "eps": optimizer.eps}
        for name, arr in optimizer.m.items():
            tensors[f"optimizer.m.{name}"] = arr
            tensors[f"optimizer.v.{name}"] = optimizer.v[name]
    index, blobs, offset = [], [], 0
    for name, arr in tensors.items():
        raw = np.ascontiguousarray(arr, dtype=_DTYPE).tobytes()
        index.append({"name": name, "shape": list(np.shape(arr)), "offset": offset,
                      "nbytes": len(raw), "sha256": hashlib.sha256(raw).hexdigest()})
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps({"format_version": FORMAT_VERSION, "config": model.config.to_dict(),
                         "epoch": epoch, "metrics": metrics, "optimizer": opt_meta,
                         "extra": extra or {}, "data_bytes": offset, "tensors": index},
                        sort_keys=True).encode("utf-8")
    first = b"%s v%d %d %s\n" % (MAGIC, FORMAT_VERSION, len(header),
                                 hashlib.sha256(header).hexdigest().encode("ascii"))
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(first)
        fh.write(header)
        for raw in blobs:
            fh.write(raw)
    os.replace(tmp, path)


def load_checkpoint(path) -> Checkpoint:
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    nl = buf.find(b"\n", 0, 256)
    if nl < 0:
        raise IntegrityError("checkpoint has no header line")
    parts = buf[:nl].split(b" ")
    if len(parts) != 4 or parts[0] != MAGIC or not parts[1].startswith(b"v"):
        raise IntegrityError("checkpoint header line is malformed")
    try:
        line_version = int(parts[1][1:])
        header_len = int(parts[2])
        digest = parts[3].decode("ascii")
    except (ValueError, UnicodeDecodeError) as exc:
        raise IntegrityError("checkpoint header line is malformed") from exc
    start = nl + 1
    header_raw = buf[start:start + header_len]
    if len(header_raw) != header_len or hashlib.sha256(header_raw).hexdigest() != digest:
        raise IntegrityError("checkpoint header fails its checksum")
    header = json.loads(header_raw)
    version = header.get("format_version")
    if version != line_version:
        raise IntegrityError("format version in header line and header body disagree")
    if version != FORMAT_VERSION:
        raise FormatVersionError(f"unsupported checkpoint format_version {version}; this build reads {FORMAT_VERSION}")
    data = memoryview(buf)[start + header_len:]
    if len(data) != header["data_bytes"]:
        raise IntegrityError(f"checkpoint data is {len(data)} bytes, header promises {header['data_bytes']}")
    tensors = {}
    for entry in header["tensors"]:
        name, shape = entry["name"], tuple(entry["shape"])
        raw = data[entry["offset"]:entry["offset"] + entry["nbytes"]]
        if len(raw) != entry["nbytes"] or entry["nbytes"] != int(np.prod(shape, dtype=np.int64)) * _DTYPE.itemsize:
            raise IntegrityError(f"tensor {name!r}: length mismatch")
        if hashlib.sha256(raw).hexdigest() != entry["sha256"]:
            raise IntegrityError(f"tensor {name!r}: checksum mismatch")
        tensors[name] = np.frombuffer(raw, dtype=_DTYPE).reshape(shape).copy()
    optimizer = None
    if header.get("optimizer"):
        meta = header["optimizer"]
        optimizer = AdamState(**meta)
        for name in list(tensors):
            if name.startswith("optimizer.m."):
                key = name[len("optimizer.m."):]
                optimizer.m[key] = tensors.pop(name)
                optimizer.v[key] = tensors.pop(f"optimizer.v.{key}")
    return Checkpoint(version, CViTConfig.from_dict(header["config"]), tensors,
                      header.get("epoch"), header.get("metrics"), optimizer, header.get("extra") or {})


def load_into(model: CViTModel, ckpt: Checkpoint) -> CViTModel:
    """Copy checkpoint tensors into ``model``; refuses any architecture mismatch."""
    try:
        model.load_state_dict(ckpt.tensors)
    except DimensionError as exc:
        raise CheckpointError(f"checkpoint does not fit this model ({exc})") from exc
    return model


def model_from_checkpoint(ckpt: Checkpoint, dtype=np.float32) -> CViTModel:
    model = init_parameters(ckpt.config, seed=0, dtype=dtype)
    load_into(model, ckpt)
    return model.eval()
