"""Binary file formats: STRD strand sets, HMAP hair maps, PYRM pyramids.

All formats are little-endian with a 4-byte ASCII magic and a u32
version.  STRD additionally has a JSON mirror for debugging.
"""

from __future__ import annotations

import json
import struct
from io import BytesIO
from pathlib import Path
from typing import BinaryIO

import numpy as np

from .hairmap import HairMap
from .scalp import ScalpModel
from .strands import StrandSet

STRD_MAGIC = b"STRD"
HMAP_MAGIC = b"HMAP"
PYRM_MAGIC = b"PYRM"
FORMAT_VERSION = 1


class FormatError(ValueError):
    """Malformed or unsupported file content."""


def _read_exact(fh: BinaryIO, n: int) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise FormatError(f"truncated file: wanted {n} bytes, got {len(buf)}")
    return buf


def _check_header(fh: BinaryIO, magic: bytes) -> int:
    got = _read_exact(fh, 4)
    if got != magic:
        raise FormatError(f"bad magic {got!r}, expected {magic!r}")
    (version,) = struct.unpack("<I", _read_exact(fh, 4))
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported {magic.decode()} version {version}")
    return version


# -- STRD -------------------------------------------------------------------

def write_strd(ss: StrandSet, fh: BinaryIO) -> None:
    arr = ss.as_array().astype("<f4")
    fh.write(STRD_MAGIC)
    fh.write(struct.pack("<III", FORMAT_VERSION, ss.num_strands, ss.points_per_strand))
    fh.write(arr.tobytes())


def read_strd(fh: BinaryIO, scalp: ScalpModel | None = None) -> StrandSet:
    _check_header(fh, STRD_MAGIC)
    n, p = struct.unpack("<II", _read_exact(fh, 8))
    if n < 1 or p < 2:
        raise FormatError(f"invalid STRD dimensions N={n}, P={p}")
    data = _read_exact(fh, n * p * 3 * 4)
    arr = np.frombuffer(data, dtype="<f4").reshape(n, p, 3).astype(np.float64)
    return StrandSet.from_array(arr, scalp=scalp)


def strd_bytes(ss: StrandSet) -> bytes:
    buf = BytesIO()
    write_strd(ss, buf)
    return buf.getvalue()


def strd_from_bytes(data: bytes, scalp: ScalpModel | None = None) -> StrandSet:
    return read_strd(BytesIO(data), scalp=scalp)


def save_strd(ss: StrandSet, path: str | Path) -> None:
    with open(path, "wb") as fh:
        write_strd(ss, fh)


def load_strd(path: str | Path, scalp: ScalpModel | None = None) -> StrandSet:
    with open(path, "rb") as fh:
        return read_strd(fh, scalp=scalp)


def import_external_strands(
    raw_strands: list[np.ndarray],
    points_per_strand: int,
    scalp: ScalpModel | None = None,
    root_tolerance: float = 5e-3,
) -> StrandSet:
    """Converter stub for external strand corpora (USC-HairSalon-style
    per-strand polylines in a unit-head frame aligned with ours).

    Each raw strand is resampled to the configured point count; strands
    whose roots fall off the scalp cap beyond ``root_tolerance`` are
    dropped.  Write the result with :func:`save_strd` to obtain the
    pipeline's native format.
    """
    from .strands import Strand, resample_polyline

    scalp = scalp if scalp is not None else ScalpModel()
    kept = []
    for raw in raw_strands:
        pts = resample_polyline(np.asarray(raw, dtype=np.float64), points_per_strand)
        if scalp.contains(pts[0][None], tolerance=root_tolerance):
            kept.append(Strand(pts))
    if not kept:
        raise ValueError("no imported strand had a root on the scalp cap")
    return StrandSet(strands=tuple(kept), scalp=scalp)


def strd_json(ss: StrandSet) -> str:
    """Human-readable mirror of the STRD payload."""
    doc = {
        "format": "STRD",
        "version": FORMAT_VERSION,
        "n": ss.num_strands,
        "p": ss.points_per_strand,
        "strands": ss.as_array().astype(np.float32).tolist(),
    }
    return json.dumps(doc)


def strd_from_json(text: str, scalp: ScalpModel | None = None) -> StrandSet:
    doc = json.loads(text)
    if doc.get("format") != "STRD":
        raise FormatError("not a STRD JSON document")
    arr = np.asarray(doc["strands"], dtype=np.float64)
    if arr.shape[:2] != (doc["n"], doc["p"]):
        raise FormatError("STRD JSON dimensions do not match payload")
    return StrandSet.from_array(arr, scalp=scalp)


# -- HMAP -------------------------------------------------------------------

def write_hmap(h: HairMap, fh: BinaryIO) -> None:
    fh.write(HMAP_MAGIC)
    fh.write(struct.pack("<III", FORMAT_VERSION, h.resolution, h.latent_dim))
    fh.write(h.grid.astype("<f4").tobytes())
    fh.write(h.validity.astype(np.uint8).tobytes())


def read_hmap(fh: BinaryIO) -> HairMap:
    _check_header(fh, HMAP_MAGIC)
    w, d = struct.unpack("<II", _read_exact(fh, 8))
    if w < 1 or d < 1:
        raise FormatError(f"invalid HMAP dimensions W={w}, D={d}")
    grid = np.frombuffer(_read_exact(fh, w * w * d * 4), dtype="<f4").reshape(w, w, d)
    validity = np.frombuffer(_read_exact(fh, w * w), dtype=np.uint8).reshape(w, w)
    return HairMap(grid=grid.copy(), validity=validity.astype(bool))


def save_hmap(h: HairMap, path: str | Path) -> None:
    with open(path, "wb") as fh:
        write_hmap(h, fh)


def load_hmap(path: str | Path) -> HairMap:
    with open(path, "rb") as fh:
        return read_hmap(fh)


# -- PYRM -------------------------------------------------------------------

def write_pyrm(residual_maps: list[HairMap], fh: BinaryIO) -> None:
    fh.write(PYRM_MAGIC)
    fh.write(struct.pack("<II", FORMAT_VERSION, len(residual_maps)))
    for h in residual_maps:
        write_hmap(h, fh)


def read_pyrm(fh: BinaryIO) -> list[HairMap]:
    _check_header(fh, PYRM_MAGIC)
    (k,) = struct.unpack("<I", _read_exact(fh, 4))
    if k < 1:
        raise FormatError("PYRM must contain at least one scale")
    return [read_hmap(fh) for _ in range(k)]


def save_pyrm(residual_maps: list[HairMap], path: str | Path) -> None:
    with open(path, "wb") as fh:
        write_pyrm(residual_maps, fh)


def load_pyrm(path: str | Path) -> list[HairMap]:
    with open(path, "rb") as fh:
        return read_pyrm(fh)
