"""Strand and strand-set data model plus arc-length resampling.

A strand is an ordered root-first 3D polyline; a strand set is N strands
with a uniform point count P, attached to the scalp model they grow from.
Both are immutable value objects: operations return new instances.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .scalp import ROOT_TOLERANCE, ScalpModel


class DegenerateStrandError(ValueError):
    """Strand has zero total arc length and cannot be resampled."""


@dataclass(frozen=True)
class Strand:
    """Ordered list of P >= 2 finite 3D points, root first."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] < 2:
            raise ValueError(f"strand needs (P>=2, 3) points, got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ValueError("strand contains non-finite coordinates")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def num_points(self) -> int:
        return self.points.shape[0]

    @property
    def root(self) -> np.ndarray:
        return self.points[0]

    def segment_lengths(self) -> np.ndarray:
        return np.linalg.norm(np.diff(self.points, axis=0), axis=1)

    def arc_length(self) -> float:
        return float(self.segment_lengths().sum())


@dataclass(frozen=True)
class StrandSet:
    """N strands with identical P, referencing the scalp they grow from."""

    strands: tuple[Strand, ...]
    scalp: ScalpModel = field(default_factory=ScalpModel)

    def __post_init__(self):
        strands = tuple(self.strands)
        if len(strands) < 1:
            raise ValueError("strand set must contain at least one strand")
        p = strands[0].num_points
        for i, s in enumerate(strands):
            if s.num_points != p:
                raise ValueError(f"strand {i} has P={s.num_points}, expected {p}")
        object.__setattr__(self, "strands", strands)

    @classmethod
    def from_array(cls, points: np.ndarray, scalp: ScalpModel | None = None) -> "StrandSet":
        """Build from an (N, P, 3) array."""
        pts = np.asarray(points, dtype=np.float64)
        if pts.ndim != 3 or pts.shape[2] != 3:
            raise ValueError(f"expected (N, P, 3) array, got {pts.shape}")
        return cls(
            strands=tuple(Strand(p) for p in pts),
            scalp=scalp if scalp is not None else ScalpModel(),
        )

    def as_array(self) -> np.ndarray:
        return np.stack([s.points for s in self.strands])

    @property
    def num_strands(self) -> int:
        return len(self.strands)

    @property
    def points_per_strand(self) -> int:
        return self.strands[0].num_points

    def validate_roots(self, tolerance: float = ROOT_TOLERANCE) -> None:
        """Check every root sits on the scalp cap; raises with strand index."""
        roots = np.stack([s.root for s in self.strands])
        self.scalp.uv_of(roots, tolerance=tolerance)

    def all_points(self) -> np.ndarray:
        """Flatten to an (N*P, 3) point cloud (used by the metric suite)."""
        return self.as_array().reshape(-1, 3)


def resample_polyline(points: np.ndarray, p_out: int) -> np.ndarray:
    """Resample a polyline to ``p_out`` points uniformly spaced by arc length.

    Endpoints are preserved exactly; interior samples are placed at arc
    lengths i * L / (p_out - 1) along the input polyline.
    """
    pts = np.asarray(points, dtype=np.float64)
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    total = seg.sum()
    if total <= 0.0:
        raise DegenerateStrandError("polyline has zero arc length")
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    targets = np.linspace(0.0, total, p_out)
    # idx of the segment each target falls in; right-side so targets on a
    # vertex take the preceding segment (value is identical either way).
    idx = np.clip(np.searchsorted(cum, targets, side="right") - 1, 0, len(seg) - 1)
    seg_safe = np.where(seg[idx] > 0, seg[idx], 1.0)
    t = (targets - cum[idx]) / seg_safe
    out = pts[idx] + t[:, None] * (pts[idx + 1] - pts[idx])
    out[0] = pts[0]
    out[-1] = pts[-1]
    return out


def resample_strand(s: Strand, p_out: int, index: int | None = None) -> Strand:
    """Arc-length uniform resampling of one strand to ``p_out`` points."""
    if p_out < 2:
        raise ValueError("p_out must be >= 2")
    try:
        return Strand(resample_polyline(s.points, p_out))
    except DegenerateStrandError:
        where = f"strand {index}" if index is not None else "strand"
        raise DegenerateStrandError(f"{where} has zero total arc length") from None


def resample_set(ss: StrandSet, p_out: int) -> StrandSet:
    return StrandSet(
        strands=tuple(resample_strand(s, p_out, index=i) for i, s in enumerate(ss.strands)),
        scalp=ss.scalp,
    )
