"""Hair maps: scalp-UV latent grids and their strand conversions.

A hair map is a W x W grid over scalp UV whose cells hold the D-dim
latent code of the strand rooted there, plus a validity mask of the
originally occupied cells.  Empty cells are filled with the value of the
nearest valid cell so pooled maxima stay meaningful.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .scalp import ScalpModel
from .strands import Strand, StrandSet

OUTLIER_SIGMA = 3.0
_MAX_OUTLIER_PASSES = 64


@dataclass(frozen=True)
class HairMap:
    """W x W x D latent grid with a W x W occupancy mask."""

    grid: np.ndarray
    validity: np.ndarray

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=np.float32)
        validity = np.asarray(self.validity, dtype=bool)
        if grid.ndim != 3 or grid.shape[0] != grid.shape[1]:
            raise ValueError(f"grid must be (W, W, D), got {grid.shape}")
        w, d = grid.shape[0], grid.shape[2]
        if w < 1 or (w & (w - 1)) != 0:
            raise ValueError(f"W must be a power of two, got {w}")
        if d < 1:
            raise ValueError("latent dim D must be >= 1")
        if validity.shape != (w, w):
            raise ValueError(f"validity must be (W, W), got {validity.shape}")
        grid.setflags(write=False)
        validity.setflags(write=False)
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "validity", validity)

    @property
    def resolution(self) -> int:
        return self.grid.shape[0]

    @property
    def latent_dim(self) -> int:
        return self.grid.shape[2]


def nearest_valid_fill(grid: np.ndarray, validity: np.ndarray) -> np.ndarray:
    """Fill invalid cells with the value of the nearest valid cell.

    Distance is Euclidean on integer grid indices; exact ties resolve to
    the smaller row index, then the smaller column index.
    """
    validity = np.asarray(validity, dtype=bool)
    if validity.all():
        return np.array(grid, copy=True)
    if not validity.any():
        raise ValueError("cannot fill a map with no valid cells")
    filled = np.array(grid, copy=True)
    valid_idx = np.argwhere(validity)
    order = np.lexsort((valid_idx[:, 1], valid_idx[:, 0]))
    valid_idx = valid_idx[order]  # lexicographic, so first match wins ties
    tree = cKDTree(valid_idx)
    holes = np.argwhere(~validity)
    dists, _ = tree.query(holes, k=1)
    d2 = np.rint(dists**2).astype(np.int64)
    for hole, dist, want in zip(holes, dists, d2):
        cands = tree.query_ball_point(hole, r=dist + 1e-6)
        best = None
        for ci in sorted(cands):
            cand = valid_idx[ci]
            if (cand[0] - hole[0]) ** 2 + (cand[1] - hole[1]) ** 2 == want:
                best = cand
                break
        filled[hole[0], hole[1]] = grid[best[0], best[1]]
    return filled


def strands_to_hairmap(ss: StrandSet, codec, w: int) -> HairMap:
    """Encode each strand and write it into the UV cell containing its root.

    Multiple roots in one cell resolve to the root nearest the cell center
    (ties to the lower strand index); empty cells take the nearest valid
    cell's value; the validity mask records originally occupied cells.
    """
    roots = np.stack([s.root for s in ss.strands])
    uv = ss.scalp.uv_of(roots)  # raises OffScalpError with the strand index
    rows, cols = ss.scalp.uv_to_cell(uv, w)

    centers = np.stack([(cols + 0.5) / w, (rows + 0.5) / w], axis=-1)
    center_dist = np.linalg.norm(uv - centers, axis=-1)

    winner: dict[tuple[int, int], int] = {}
    for i in range(ss.num_strands):
        key = (int(rows[i]), int(cols[i]))
        j = winner.get(key)
        if j is None or (center_dist[i], i) < (center_dist[j], j):
            winner[key] = i

    d = codec.latent_dim
    grid = np.zeros((w, w, d), dtype=np.float32)
    validity = np.zeros((w, w), dtype=bool)
    for (r, c), i in winner.items():
        grid[r, c] = codec.encode(ss.strands[i])
        validity[r, c] = True
    grid = nearest_valid_fill(grid, validity)
    return HairMap(grid=grid, validity=validity)


def hairmap_to_strands(
    h: HairMap, codec, scalp: ScalpModel | None = None, all_cells: bool = False
) -> StrandSet:
    """Decode cells back into strands rooted at cell-center scalp positions.

    Valid cells only by default; ``all_cells`` decodes the full grid.
    """
    if h.latent_dim != codec.latent_dim:
        raise ValueError(
            f"map D={h.latent_dim} does not match codec D={codec.latent_dim}"
        )
    scalp = scalp if scalp is not None else ScalpModel()
    w = h.resolution
    strands: list[Strand] = []
    for r in range(w):
        for c in range(w):
            if not (all_cells or h.validity[r, c]):
                continue
            root = scalp.surface(scalp.cell_center_uv(r, c, w))
            strands.append(codec.decode(h.grid[r, c], root))
    return StrandSet(strands=tuple(strands), scalp=scalp)


def _one_outlier_pass(vals: np.ndarray, validity: np.ndarray) -> np.ndarray | None:
    """Replace three-sigma outliers of one channel by their valid
    non-outlier 8-neighborhood mean; None if nothing was flagged."""
    v = vals[validity]
    mean = float(v.mean())
    std = float(v.std())
    if std <= 0.0:
        return None
    out_mask = validity & (np.abs(vals - mean) > OUTLIER_SIGMA * std)
    if not out_mask.any():
        return None

    eligible = validity & ~out_mask
    w = vals.shape[0]
    acc = np.zeros((w, w), dtype=np.float64)
    cnt = np.zeros((w, w), dtype=np.float64)
    for dr in (-1, 0, 1):
        for dc in (-1, 0, 1):
            if dr == 0 and dc == 0:
                continue
            src_r = slice(max(0, -dr), w - max(0, dr))
            src_c = slice(max(0, -dc), w - max(0, dc))
            dst_r = slice(max(0, dr), w + min(0, dr))
            dst_c = slice(max(0, dc), w + min(0, dc))
            acc[dst_r, dst_c] += np.where(eligible, vals, 0.0)[src_r, src_c]
            cnt[dst_r, dst_c] += eligible[src_r, src_c]
    repl = np.where(cnt > 0, acc / np.maximum(cnt, 1.0), mean)
    new_vals = vals.copy()
    new_vals[out_mask] = repl[out_mask].astype(vals.dtype)
    return new_vals


def remove_outliers(h: HairMap) -> HairMap:
    """Three-sigma outlier cleanup with local smoothing, per latent channel.

    Cells deviating from the channel mean (over valid cells) by more than
    three standard deviations are replaced by the mean of their valid
    non-outlier 8-neighbors.  The pass repeats until no cell is flagged,
    which makes the operation idempotent; validity is unchanged and holes
    are re-filled from the cleaned valid cells.
    """
    if h.resolution < 3:
        raise ValueError("outlier removal needs W >= 3")
    grid = np.array(h.grid, copy=True)
    changed_any = False
    for c in range(h.latent_dim):
        vals = grid[:, :, c].astype(np.float64)
        for _ in range(_MAX_OUTLIER_PASSES):
            new_vals = _one_outlier_pass(vals, h.validity)
            if new_vals is None:
                break
            vals = new_vals
            changed_any = True
        grid[:, :, c] = vals.astype(np.float32)
    if changed_any:
        grid = nearest_valid_fill(grid, h.validity)
    return HairMap(grid=grid, validity=h.validity.copy())
