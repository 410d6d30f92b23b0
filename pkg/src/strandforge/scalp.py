"""Analytic scalp surface with an invertible UV parameterization.

The scalp is a spherical cap on a unit-head frame (head height ~ 1.0,
y up, +z facing front).  UV coordinates in [0, 1]^2 map bijectively to
the cap via normalized (azimuth, elevation), which makes the hair-map
cell <-> surface-point correspondence exactly invertible.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Elevation stops short of the pole so that the azimuth stays well defined
# and the UV map remains bijective on the whole cap.
DEFAULT_CENTER = (0.0, 0.85, 0.0)
DEFAULT_RADIUS = 0.35
DEFAULT_AZIMUTH_RANGE = (-np.pi, np.pi)
DEFAULT_ELEVATION_RANGE = (0.05, 1.45)

ROOT_TOLERANCE = 1e-3


class OffScalpError(ValueError):
    """A strand root does not lie on the scalp cap within tolerance."""


@dataclass(frozen=True)
class ScalpModel:
    """Spherical scalp cap: center, radius and the UV extent of the cap.

    ``uv_extent`` is ((azimuth_min, azimuth_max), (elevation_min,
    elevation_max)) in radians; elevation is measured up from the
    equator of the sphere (y = center_y plane).
    """

    center: tuple[float, float, float] = DEFAULT_CENTER
    radius: float = DEFAULT_RADIUS
    uv_extent: tuple[tuple[float, float], tuple[float, float]] = field(
        default=(DEFAULT_AZIMUTH_RANGE, DEFAULT_ELEVATION_RANGE)
    )

    def __post_init__(self):
        (a0, a1), (e0, e1) = self.uv_extent
        if not (a0 < a1 and e0 < e1):
            raise ValueError("uv_extent ranges must be increasing")
        if not (-np.pi / 2 < e0 and e1 < np.pi / 2 + 1e-12):
            raise ValueError("elevation range must stay within (-pi/2, pi/2]")
        if self.radius <= 0:
            raise ValueError("radius must be positive")

    # -- UV <-> 3D ---------------------------------------------------------

    def surface(self, uv: np.ndarray) -> np.ndarray:
        """Map UV coordinates (..., 2) in [0,1]^2 to scalp points (..., 3)."""
        uv = np.asarray(uv, dtype=np.float64)
        (a0, a1), (e0, e1) = self.uv_extent
        az = a0 + uv[..., 0] * (a1 - a0)
        el = e0 + uv[..., 1] * (e1 - e0)
        c = np.cos(el)
        out = np.stack(
            [c * np.sin(az), np.sin(el), c * np.cos(az)], axis=-1
        ) * self.radius + np.asarray(self.center)
        return out

    def uv_of(self, points: np.ndarray, tolerance: float = ROOT_TOLERANCE) -> np.ndarray:
        """Invert :meth:`surface`; raises :class:`OffScalpError` if a point is
        farther than ``tolerance`` from the cap surface."""
        p = np.asarray(points, dtype=np.float64) - np.asarray(self.center)
        r = np.linalg.norm(p, axis=-1)
        if np.any(np.abs(r - self.radius) > tolerance):
            bad = int(np.argmax(np.abs(r - self.radius)))
            raise OffScalpError(
                f"point {bad} is {abs(r.flat[bad] - self.radius):.4g} from the scalp sphere"
            )
        el = np.arcsin(np.clip(p[..., 1] / r, -1.0, 1.0))
        az = np.arctan2(p[..., 0], p[..., 2])
        (a0, a1), (e0, e1) = self.uv_extent
        u = (az - a0) / (a1 - a0)
        v = (el - e0) / (e1 - e0)
        uv = np.stack([u, v], axis=-1)
        if np.any(uv < -tolerance) or np.any(uv > 1.0 + tolerance):
            bad = int(np.argmax(np.max(np.abs(uv - 0.5), axis=-1)))
            raise OffScalpError(f"point {bad} lies outside the hair-growing cap")
        return np.clip(uv, 0.0, 1.0)

    def normal(self, uv: np.ndarray) -> np.ndarray:
        """Outward unit normal at the given UV coordinates."""
        p = self.surface(uv) - np.asarray(self.center)
        return p / np.linalg.norm(p, axis=-1, keepdims=True)

    def contains(self, points: np.ndarray, tolerance: float = ROOT_TOLERANCE) -> bool:
        try:
            self.uv_of(points, tolerance=tolerance)
            return True
        except OffScalpError:
            return False

    def cell_center_uv(self, i: int, j: int, w: int) -> np.ndarray:
        """UV of the center of grid cell (row i, col j) on a W x W hair map.

        Rows index V (elevation), columns index U (azimuth).
        """
        return np.array([(j + 0.5) / w, (i + 0.5) / w])

    def uv_to_cell(self, uv: np.ndarray, w: int) -> tuple[np.ndarray, np.ndarray]:
        """Grid cell (row, col) containing each UV coordinate."""
        uv = np.asarray(uv, dtype=np.float64)
        col = np.clip((uv[..., 0] * w).astype(np.int64), 0, w - 1)
        row = np.clip((uv[..., 1] * w).astype(np.int64), 0, w - 1)
        return row, col
