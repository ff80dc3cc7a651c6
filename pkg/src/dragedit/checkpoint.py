"""Binary tensor archive used for model checkpoints and state dumps.

Layout (all integers little-endian u32):

    magic "DNCK" | version | meta_len | meta JSON (UTF-8)
    | tensor_count | per tensor: name_len, name, rank, dims[rank],
                     float32 LE payload

Round trips are bit-exact for float32 tensors.  Malformed files raise a
distinct error per failure mode.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import BinaryIO

import numpy as np

from .autodiff import Tensor
from .unet import ArchConfig, UNet

__all__ = [
    "CheckpointError",
    "CheckpointFormatError",
    "CheckpointVersionError",
    "CheckpointTruncatedError",
    "save_archive",
    "load_archive",
    "save_checkpoint",
    "load_checkpoint",
]

MAGIC = b"DNCK"
VERSION = 1
_MAX_NAME = 1 << 16


class CheckpointError(Exception):
    """Base class for archive read failures."""


class CheckpointFormatError(CheckpointError):
    """Wrong magic or a structurally impossible field."""


class CheckpointVersionError(CheckpointError):
    """Recognized container, unsupported version."""


class CheckpointTruncatedError(CheckpointError):
    """File ends mid-record."""


def _read_exact(f: BinaryIO, n: int, what: str) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise CheckpointTruncatedError(f"unexpected end of file while reading {what}")
    return buf


def _read_u32(f: BinaryIO, what: str) -> int:
    return struct.unpack("<I", _read_exact(f, 4, what))[0]


def save_archive(path: str | Path, meta: dict, tensors: dict[str, np.ndarray]) -> None:
    with open(path, "wb") as f:
        meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        f.write(struct.pack("<I", len(meta_bytes)))
        f.write(meta_bytes)
        f.write(struct.pack("<I", len(tensors)))
        for name, arr in tensors.items():
            name_b = name.encode("utf-8")
            f.write(struct.pack("<I", len(name_b)))
            f.write(name_b)
            f.write(struct.pack("<I", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_archive(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as f:
        magic = _read_exact(f, 4, "magic")
        if magic != MAGIC:
            raise CheckpointFormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
        version = _read_u32(f, "version")
        if version != VERSION:
            raise CheckpointVersionError(f"unsupported version {version}")
        meta_len = _read_u32(f, "meta length")
        try:
            meta = json.loads(_read_exact(f, meta_len, "meta block").decode("utf-8"))
        except (ValueError, UnicodeDecodeError) as exc:
            raise CheckpointFormatError(f"meta block is not valid JSON: {exc}") from None
        count = _read_u32(f, "tensor count")
        tensors: dict[str, np.ndarray] = {}
        for i in range(count):
            name_len = _read_u32(f, f"name length of tensor {i}")
            if name_len > _MAX_NAME:
                raise CheckpointFormatError(f"implausible name length {name_len}")
            name = _read_exact(f, name_len, f"name of tensor {i}").decode("utf-8")
            rank = _read_u32(f, f"rank of {name}")
            if rank > 8:
                raise CheckpointFormatError(f"implausible rank {rank} for {name}")
            dims = struct.unpack(f"<{rank}I", _read_exact(f, 4 * rank, f"dims of {name}"))
            n_elem = int(np.prod(dims, dtype=np.int64)) if rank else 1
            payload = _read_exact(f, 4 * n_elem, f"payload of {name}")
            tensors[name] = np.frombuffer(payload, dtype="<f4").reshape(dims).copy()
        return meta, tensors


def save_checkpoint(path: str | Path, model: UNet, extra_meta: dict | None = None) -> None:
    meta = {"kind": "checkpoint", "arch": model.config.to_dict()}
    if extra_meta:
        meta.update(extra_meta)
    save_archive(path, meta, {k: v.data for k, v in model.params.items()})


def load_checkpoint(path: str | Path) -> tuple[UNet, dict]:
    """Rebuild the model; parameters load with requires_grad off."""
    meta, tensors = load_archive(path)
    if meta.get("kind") != "checkpoint":
        raise CheckpointFormatError(f"archive is a {meta.get('kind')!r}, not a checkpoint")
    config = ArchConfig.from_dict(meta["arch"])
    reference = UNet.init(config, seed=0)
    params: dict[str, Tensor] = {}
    for name, ref in reference.params.items():
        if name not in tensors:
            raise CheckpointFormatError(f"checkpoint is missing parameter {name}")
        if tensors[name].shape != ref.shape:
            raise CheckpointFormatError(
                f"parameter {name} has shape {tensors[name].shape}, expected {ref.shape}")
        params[name] = Tensor(tensors[name])
    extra = set(tensors) - set(params)
    if extra:
        raise CheckpointFormatError(f"checkpoint has unknown parameters: {sorted(extra)}")
    return UNet(config, params), meta
