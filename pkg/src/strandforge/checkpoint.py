"""CKPT checkpoint container: named float32 tensors + JSON metadata sidecar."""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import BinaryIO

import numpy as np

from .fileio import FormatError, _read_exact

CKPT_MAGIC = b"CKPT"
CKPT_VERSION = 1


def write_ckpt(tensors: dict[str, np.ndarray], fh: BinaryIO) -> None:
    fh.write(CKPT_MAGIC)
    fh.write(struct.pack("<II", CKPT_VERSION, len(tensors)))
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(arr, dtype="<f4")
        encoded = name.encode("utf-8")
        fh.write(struct.pack("<I", len(encoded)))
        fh.write(encoded)
        fh.write(struct.pack("<I", arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        fh.write(arr.tobytes())


def read_ckpt(fh: BinaryIO) -> dict[str, np.ndarray]:
    got = _read_exact(fh, 4)
    if got != CKPT_MAGIC:
        raise FormatError(f"bad magic {got!r}, expected {CKPT_MAGIC!r}")
    version, count = struct.unpack("<II", _read_exact(fh, 8))
    if version != CKPT_VERSION:
        raise FormatError(f"unsupported CKPT version {version}")
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<I", _read_exact(fh, 4))
        name = _read_exact(fh, name_len).decode("utf-8")
        (rank,) = struct.unpack("<I", _read_exact(fh, 4))
        dims = struct.unpack(f"<{rank}I", _read_exact(fh, 4 * rank)) if rank else ()
        n = int(np.prod(dims)) if dims else 1
        data = np.frombuffer(_read_exact(fh, n * 4), dtype="<f4")
        tensors[name] = data.reshape(dims).copy()
    return tensors


def save_checkpoint(
    path: str | Path, tensors: dict[str, np.ndarray], metadata: dict | None = None
) -> None:
    path = Path(path)
    with open(path, "wb") as fh:
        write_ckpt(tensors, fh)
    sidecar = path.with_suffix(path.suffix + ".json")
    with open(sidecar, "w") as fh:
        json.dump(metadata or {}, fh, indent=2, sort_keys=True)


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    with open(path, "rb") as fh:
        tensors = read_ckpt(fh)
    sidecar = path.with_suffix(path.suffix + ".json")
    metadata = {}
    if sidecar.exists():
        with open(sidecar) as fh:
            metadata = json.load(fh)
    return tensors, metadata


def state_dict_to_tensors(state_dict) -> dict[str, np.ndarray]:
    """Flatten a torch state dict into CKPT-storable float32 arrays."""
    return {
        name: np.asarray(t.detach().cpu().numpy(), dtype=np.float32)
        for name, t in state_dict.items()
    }


def tensors_to_state_dict(tensors: dict[str, np.ndarray]):
    import torch

    return {name: torch.from_numpy(np.array(arr, copy=True)) for name, arr in tensors.items()}
