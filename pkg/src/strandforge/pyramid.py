"""Residual multi-scale decomposition of hair maps and fixed upsamplers.

A hair map H is pooled into K scale maps H_k (channel-wise max pooling
with kernel 2^(K-k)); each scale except the coarsest then keeps only the
residual against the 2x2-tiled previous scale.  Reconstruction inverts
the residuals exactly, so every scale is a decodable intermediate.

The fixed interpolation upsamplers (nearest, bilinear, cosine-similarity
mix) are retained as baselines against the learned upsampler.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .hairmap import HairMap, nearest_valid_fill


@dataclass(frozen=True)
class PyramidConfig:
    """K scales; scale k has resolution base_w * 2**(k-1)."""

    num_scales: int
    base_w: int

    def __post_init__(self):
        if self.num_scales < 1:
            raise ValueError("need at least one scale")
        if self.base_w < 1 or (self.base_w & (self.base_w - 1)) != 0:
            raise ValueError("base_w must be a power of two")

    def resolution(self, k: int) -> int:
        if not 1 <= k <= self.num_scales:
            raise ValueError(f"scale {k} out of range 1..{self.num_scales}")
        return self.base_w * 2 ** (k - 1)

    @property
    def top_resolution(self) -> int:
        return self.resolution(self.num_scales)


@dataclass(frozen=True)
class ScalePyramid:
    """Residual grids, one per scale, with per-scale validity masks."""

    residuals: tuple[np.ndarray, ...]
    validities: tuple[np.ndarray, ...]
    config: PyramidConfig

    def __post_init__(self):
        if len(self.residuals) != self.config.num_scales:
            raise ValueError("residual count does not match config")
        for k, (res, val) in enumerate(zip(self.residuals, self.validities), start=1):
            w = self.config.resolution(k)
            if res.shape[:2] != (w, w) or val.shape != (w, w):
                raise ValueError(f"scale {k} grids must be {w}x{w}")

    @property
    def latent_dim(self) -> int:
        return self.residuals[0].shape[2]

    def residual_maps(self) -> list[HairMap]:
        return [
            HairMap(grid=r, validity=v)
            for r, v in zip(self.residuals, self.validities)
        ]


def tile(grid: np.ndarray) -> np.ndarray:
    """Spatially replicate each cell into a 2x2 block (doubles resolution)."""
    return np.repeat(np.repeat(grid, 2, axis=0), 2, axis=1)


def _masked_max_pool(grid: np.ndarray, validity: np.ndarray, kernel: int):
    """Channel-wise max pool excluding invalid cells; all-invalid regions
    are hole-filled afterwards and marked invalid."""
    if kernel == 1:
        return np.array(grid, copy=True), validity.copy()
    w, _, d = grid.shape
    g = np.where(validity[..., None], grid.astype(np.float32), -np.inf)
    g = g.reshape(w // kernel, kernel, w // kernel, kernel, d)
    pooled = g.max(axis=(1, 3))
    pooled_valid = validity.reshape(w // kernel, kernel, w // kernel, kernel).any(axis=(1, 3))
    pooled = np.where(pooled_valid[..., None], pooled, 0.0).astype(np.float32)
    pooled = nearest_valid_fill(pooled, pooled_valid)
    return pooled, pooled_valid


def decompose(h: HairMap, cfg: PyramidConfig) -> ScalePyramid:
    """Split a hair map into per-scale residual grids.

    H_k is the masked max pool of H with kernel 2^(K-k); the stored grid
    for scale k >= 2 is H_k - tile(H_{k-1}).
    """
    if cfg.top_resolution != h.resolution:
        raise ValueError(
            f"config top resolution {cfg.top_resolution} != map W {h.resolution}"
        )
    k_total = cfg.num_scales
    scale_maps = []
    scale_valid = []
    for k in range(1, k_total + 1):
        pooled, valid = _masked_max_pool(h.grid, h.validity, 2 ** (k_total - k))
        scale_maps.append(pooled)
        scale_valid.append(valid)
    residuals = [scale_maps[0]]
    for k in range(1, k_total):
        residuals.append(scale_maps[k] - tile(scale_maps[k - 1]))
    return ScalePyramid(
        residuals=tuple(residuals), validities=tuple(scale_valid), config=cfg
    )


def reconstruct(p: ScalePyramid, upto_k: int | None = None) -> HairMap:
    """Rebuild the scale map H_k from residuals 1..k (defaults to the top)."""
    k = p.config.num_scales if upto_k is None else upto_k
    if not 1 <= k <= p.config.num_scales:
        raise ValueError(f"upto_k {k} out of range 1..{p.config.num_scales}")
    acc = p.residuals[0]
    for i in range(1, k):
        acc = p.residuals[i] + tile(acc)
    return HairMap(grid=acc, validity=p.validities[k - 1])


def reconstruct_from_grids(
    residual_grids: list[np.ndarray],
    validities: list[np.ndarray],
    cfg: PyramidConfig,
    upto_k: int | None = None,
) -> HairMap:
    """Reconstruct directly from raw residual grids (generator output path)."""
    pyr = ScalePyramid(
        residuals=tuple(np.asarray(g, dtype=np.float32) for g in residual_grids),
        validities=tuple(validities),
        config=cfg,
    )
    return reconstruct(pyr, upto_k)


def _bilinear_axis_weights(w_in: int, factor: int):
    src = (np.arange(w_in * factor) + 0.5) / factor - 0.5
    i0 = np.floor(src).astype(np.int64)
    t = src - i0
    i1 = np.clip(i0 + 1, 0, w_in - 1)
    i0 = np.clip(i0, 0, w_in - 1)
    return i0, i1, t


def _bilinear(grid: np.ndarray, factor: int) -> np.ndarray:
    """Separable linear interpolation with half-cell centers, edge-clamped."""
    w = grid.shape[0]
    r0, r1, tr = _bilinear_axis_weights(w, factor)
    c0, c1, tc = _bilinear_axis_weights(w, factor)
    rows = grid[r0] * (1.0 - tr)[:, None, None] + grid[r1] * tr[:, None, None]
    out = (
        rows[:, c0] * (1.0 - tc)[None, :, None]
        + rows[:, c1] * tc[None, :, None]
    )
    return out.astype(grid.dtype)


def _pairwise_cosine_mean(vecs: np.ndarray) -> np.ndarray:
    """Mean pairwise cosine similarity over the last-but-one axis of
    (..., 4, D) stacks; zero vectors match only other zero vectors."""
    norms = np.linalg.norm(vecs, axis=-1)
    safe = np.where(norms > 0, norms, 1.0)
    unit = vecs / safe[..., None]
    sims = []
    for a in range(4):
        for b in range(a + 1, 4):
            cos = (unit[..., a, :] * unit[..., b, :]).sum(axis=-1)
            both_zero = (norms[..., a] == 0) & (norms[..., b] == 0)
            one_zero = (norms[..., a] == 0) ^ (norms[..., b] == 0)
            cos = np.where(both_zero, 1.0, cos)
            cos = np.where(one_zero, 0.0, cos)
            sims.append(cos)
    return np.mean(sims, axis=0)


def upsample_fixed(guide: HairMap, method: str, factor: int) -> HairMap:
    """Fixed-interpolation upsampling baselines.

    nearest repeats each cell; bilinear interpolates with half-cell
    alignment; cosine_mix blends the two per cell with weight equal to
    the clamped mean pairwise cosine similarity of the 2x2 guide latents
    feeding the bilinear sample.
    """
    if factor not in (2, 4):
        raise ValueError(f"factor must be 2 or 4, got {factor}")
    validity = guide.validity
    for _ in range(factor.bit_length() - 1):
        validity = tile(validity)

    if method == "nearest":
        grid = guide.grid
        for _ in range(factor.bit_length() - 1):
            grid = tile(grid)
        return HairMap(grid=grid, validity=validity)

    if method == "bilinear":
        return HairMap(grid=_bilinear(guide.grid, factor), validity=validity)

    if method == "cosine_mix":
        bil = _bilinear(guide.grid, factor)
        near = guide.grid
        for _ in range(factor.bit_length() - 1):
            near = tile(near)
        w_in = guide.resolution
        r0, r1, _ = _bilinear_axis_weights(w_in, factor)
        c0, c1, _ = _bilinear_axis_weights(w_in, factor)
        corners = np.stack(
            [
                guide.grid[r0][:, c0],
                guide.grid[r0][:, c1],
                guide.grid[r1][:, c0],
                guide.grid[r1][:, c1],
            ],
            axis=-2,
        )  # (W_out, W_out, 4, D)
        w = np.clip(_pairwise_cosine_mean(corners), 0.0, 1.0)[..., None]
        grid = (w * bil + (1.0 - w) * near).astype(np.float32)
        return HairMap(grid=grid, validity=validity)

    raise ValueError(f"unknown upsampling method {method!r}")
