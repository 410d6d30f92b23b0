"""Procedural hairstyle corpus and multi-density sketch rasterization.

Hairstyles are grown by arc-length integration of a direction field
(gravity droop + helical curl + parting deflection) from quasi-uniform
scalp roots, so the corpus is fully determined by a seed.  Sketches are
rendered by direct orthographic rasterization of the guide strands of a
chosen pyramid scale instead of a render-then-line-art pipeline; a light
head/shoulder silhouette is stroked for scale reference.  A dataset
build therefore reproduces byte-exactly from its manifest.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from . import fileio
from .codec import StrandCodec, StrandCodecConfig, train_strand_codec
from .hairmap import hairmap_to_strands, remove_outliers, strands_to_hairmap
from .pyramid import PyramidConfig, decompose, reconstruct
from .scalp import ScalpModel
from .strands import Strand, StrandSet, resample_polyline, resample_set

AUGMENT_KINDS = ("squeeze", "stretch", "cut", "curliness")
_GOLDEN = 0.6180339887498949


@dataclass(frozen=True)
class StyleParams:
    """Procedural hairstyle controls; the same seed grows the same hair.

    length: target arc length (model units, head height ~ 1).
    curl_amplitude: lateral curl velocity fraction (0 = straight).
    curl_frequency: helix turns over one strand length.
    parting: parting-line azimuth in radians.
    bangs_fraction: fraction of the frontal sector cut short.
    gravity_droop: how fast directions bend toward -y per unit length.
    """

    length: float = 0.5
    curl_amplitude: float = 0.0
    curl_frequency: float = 3.0
    parting: float = 0.0
    bangs_fraction: float = 0.0
    gravity_droop: float = 2.0
    seed: int = 0

    def __post_init__(self):
        if not 0.05 <= self.length <= 2.0:
            raise ValueError("length must be in [0.05, 2.0]")
        if not 0.0 <= self.curl_amplitude <= 2.0:
            raise ValueError("curl_amplitude must be in [0, 2]")
        if not 0.0 <= self.bangs_fraction <= 1.0:
            raise ValueError("bangs_fraction must be in [0, 1]")
        if not 0.0 <= self.gravity_droop <= 10.0:
            raise ValueError("gravity_droop must be in [0, 10]")


@dataclass(frozen=True)
class SketchImage:
    """S x S grayscale sketch; background 255, strokes dark."""

    pixels: np.ndarray
    density_level: int

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.uint8)
        if px.ndim != 2 or px.shape[0] != px.shape[1]:
            raise ValueError(f"sketch must be square grayscale, got {px.shape}")
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @property
    def size(self) -> int:
        return self.pixels.shape[0]

    def save_png(self, path) -> None:
        Image.fromarray(np.asarray(self.pixels), mode="L").save(path, format="PNG")

    @classmethod
    def load_png(cls, path, density_level: int = 0) -> "SketchImage":
        img = Image.open(path).convert("L")
        return cls(pixels=np.asarray(img, dtype=np.uint8), density_level=density_level)


# -- synthesis ---------------------------------------------------------------

def _root_lattice(scalp: ScalpModel, n: int) -> np.ndarray:
    """Quasi-uniform (golden-ratio spiral) UV lattice over the scalp cap,
    uniform in cap area."""
    i = np.arange(n)
    u = (i * _GOLDEN) % 1.0
    (_, _), (e0, e1) = scalp.uv_extent
    t = (i + 0.5) / n
    el = np.arcsin(np.sin(e0) + t * (np.sin(e1) - np.sin(e0)))
    v = (el - e0) / (e1 - e0)
    return np.stack([u, v], axis=-1)


def _wrap_angle(a: float) -> float:
    return (a + math.pi) % (2.0 * math.pi) - math.pi


def synthesize_hairstyle(
    p: StyleParams, scalp: ScalpModel | None = None, n: int = 400, num_points: int = 32
) -> StrandSet:
    """Grow N strands of P points each; deterministic per StyleParams.seed."""
    scalp = scalp if scalp is not None else ScalpModel()
    rng = np.random.default_rng(p.seed)
    uv = _root_lattice(scalp, n)
    roots = scalp.surface(uv)
    normals = scalp.normal(uv)
    (a0, a1), _ = scalp.uv_extent
    down = np.array([0.0, -1.0, 0.0])

    strands = []
    for i in range(n):
        length = p.length * (1.0 + 0.03 * rng.uniform(-1.0, 1.0))
        azimuth = a0 + uv[i, 0] * (a1 - a0)
        rel = _wrap_angle(azimuth - p.parting)
        # Frontal sector: bang strands are grown short.
        front = abs(_wrap_angle(azimuth)) < p.bangs_fraction * math.pi
        if front:
            length *= 0.35
        # Parting rotates the whole growth plane about the y axis.
        side = 1.0 if rel >= 0 else -1.0
        tilt = side * 0.25 * math.exp(-((rel / 1.2) ** 2))
        az_eff = azimuth + tilt
        b_r = np.array([math.sin(az_eff), 0.0, math.cos(az_eff)])
        plane_n = np.array([math.cos(az_eff), 0.0, -math.sin(az_eff)])

        nrm = normals[i]
        el = math.asin(np.clip(nrm[1], -1.0, 1.0))
        direction = math.cos(el) * b_r + math.sin(el) * np.array([0.0, 1.0, 0.0])
        phase = rng.uniform(0.0, 2.0 * math.pi)

        h = length / (num_points - 1)
        omega = 2.0 * math.pi * p.curl_frequency / max(length, 1e-9)
        pts = np.empty((num_points, 3))
        pts[0] = roots[i]
        s = 0.0
        for j in range(1, num_points):
            direction = direction + p.gravity_droop * h * down
            direction = direction / np.linalg.norm(direction)
            if p.curl_amplitude > 0.0:
                in_plane = np.cross(plane_n, direction)
                curl = p.curl_amplitude * (
                    math.cos(omega * s + phase) * plane_n
                    + math.sin(omega * s + phase) * in_plane
                )
                step_dir = direction + curl
                step_dir = step_dir / np.linalg.norm(step_dir)
            else:
                step_dir = direction
            pts[j] = pts[j - 1] + h * step_dir
            s += h
        strands.append(Strand(pts))
    return StrandSet(strands=tuple(strands), scalp=scalp)


# -- augmentation -------------------------------------------------------------

def _transform_displacements(ss: StrandSet, fn) -> StrandSet:
    out = []
    for s in ss.strands:
        disp = s.points - s.root
        pts = s.root + fn(disp)
        out.append(Strand(resample_polyline(pts, ss.points_per_strand)))
    return StrandSet(strands=tuple(out), scalp=ss.scalp)


def augment(ss: StrandSet, kind: str, magnitude: float) -> StrandSet:
    """Corpus augmentations; roots never move and the result is resampled
    back to the original P."""
    if kind not in AUGMENT_KINDS:
        raise ValueError(f"kind must be one of {AUGMENT_KINDS}")
    if magnitude < 0:
        raise ValueError("magnitude must be >= 0")
    if magnitude == 0.0:
        return resample_set(ss, ss.points_per_strand)

    if kind == "squeeze":
        factor = 1.0 / (1.0 + magnitude)

        def fn(disp):
            scaled = disp.copy()
            scaled[:, 0] *= factor
            scaled[:, 2] *= factor
            return scaled

        return _transform_displacements(ss, fn)

    if kind == "stretch":
        factor = 1.0 + magnitude

        def fn(disp):
            scaled = disp.copy()
            scaled[:, 1] *= factor
            return scaled

        return _transform_displacements(ss, fn)

    if kind == "cut":
        keep = max(1.0 - magnitude, 0.05)
        out = []
        for s in ss.strands:
            total = s.arc_length()
            target = keep * total
            seg = s.segment_lengths()
            cum = np.concatenate([[0.0], np.cumsum(seg)])
            idx = int(np.searchsorted(cum, target, side="right") - 1)
            idx = min(max(idx, 0), len(seg) - 1)
            t = (target - cum[idx]) / seg[idx] if seg[idx] > 0 else 0.0
            end = s.points[idx] + t * (s.points[idx + 1] - s.points[idx])
            pts = np.concatenate([s.points[: idx + 1], [end]])
            out.append(Strand(resample_polyline(pts, ss.points_per_strand)))
        return StrandSet(strands=tuple(out), scalp=ss.scalp)

    # curliness: helical offset about the local tangent, zero at the root.
    freq = 4.0
    out = []
    for s in ss.strands:
        seg = s.segment_lengths()
        total = seg.sum()
        cum = np.concatenate([[0.0], np.cumsum(seg)]) / max(total, 1e-12)
        tangents = np.gradient(s.points, axis=0)
        tangents /= np.maximum(np.linalg.norm(tangents, axis=1, keepdims=True), 1e-12)
        ref = np.array([0.0, 1.0, 0.0])
        u = np.cross(tangents, ref)
        bad = np.linalg.norm(u, axis=1) < 1e-6
        u[bad] = np.array([1.0, 0.0, 0.0])
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        w = np.cross(tangents, u)
        ang = 2.0 * math.pi * freq * cum
        ramp = np.minimum(3.0 * cum, 1.0)
        amp = magnitude * 0.1 * ramp
        offs = amp[:, None] * (
            (np.cos(ang) - 1.0)[:, None] * u + np.sin(ang)[:, None] * w
        )
        out.append(Strand(resample_polyline(s.points + offs, ss.points_per_strand)))
    return StrandSet(strands=tuple(out), scalp=ss.scalp)


# -- rasterization -------------------------------------------------------------

_SILHOUETTE = [
    # head outline (closed circle, appended below), neck and shoulders
    np.array([[-0.08, 0.44, 0.0], [-0.08, 0.30, 0.0], [-0.46, 0.22, 0.0], [-0.52, 0.18, 0.0]]),
    np.array([[0.08, 0.44, 0.0], [0.08, 0.30, 0.0], [0.46, 0.22, 0.0], [0.52, 0.18, 0.0]]),
]


def _head_circle() -> np.ndarray:
    a = np.linspace(0.0, 2.0 * math.pi, 64)
    return np.stack([0.42 * np.cos(a), 0.80 + 0.50 * np.sin(a), np.zeros_like(a)], axis=-1)


def _splat_polyline(cov: np.ndarray, px: np.ndarray) -> None:
    """Max-blend bilinear splatting of densely sampled segments (order
    independent, so rasterization is deterministic)."""
    size = cov.shape[0]
    starts, ends = px[:-1], px[1:]
    lens = np.linalg.norm(ends - starts, axis=1)
    counts = np.maximum(2, np.ceil(lens * 3.0).astype(np.int64)) + 1
    total = int(counts.sum())
    seg_of = np.repeat(np.arange(len(lens)), counts)
    rank = np.arange(total) - np.repeat(np.concatenate([[0], np.cumsum(counts)[:-1]]), counts)
    t = rank / (counts[seg_of] - 1)
    pts = starts[seg_of] + t[:, None] * (ends - starts)[seg_of]
    x, y = pts[:, 0], pts[:, 1]
    x0, y0 = np.floor(x).astype(np.int64), np.floor(y).astype(np.int64)
    fx, fy = x - x0, y - y0
    for dx, dy, wgt in (
        (0, 0, (1 - fx) * (1 - fy)),
        (1, 0, fx * (1 - fy)),
        (0, 1, (1 - fx) * fy),
        (1, 1, fx * fy),
    ):
        xi, yi = x0 + dx, y0 + dy
        ok = (xi >= 0) & (xi < size) & (yi >= 0) & (yi < size)
        np.maximum.at(cov, (yi[ok], xi[ok]), wgt[ok])


def compute_frame(points: np.ndarray, size: int, fill: float = 0.76):
    """Isotropic world->pixel transform centering the XY bounding box."""
    xy = points[:, :2]
    lo, hi = xy.min(axis=0), xy.max(axis=0)
    extent = float(max(hi[0] - lo[0], hi[1] - lo[1]))
    if extent <= 0:
        raise ValueError("degenerate geometry: empty bounding box")
    scale = fill * size / extent
    center = (lo + hi) / 2.0
    return center, scale


def _to_pixels(points: np.ndarray, center, scale, size: int) -> np.ndarray:
    x = (points[:, 0] - center[0]) * scale + size / 2.0
    y = (center[1] - points[:, 1]) * scale + size / 2.0
    return np.stack([x, y], axis=-1)


def rasterize_sketch(
    ss: StrandSet,
    density_level: int,
    size: int = 64,
    frame=None,
    draw_silhouette: bool = True,
) -> SketchImage:
    """Orthographic front-view sketch of the given guide strands.

    The caller passes the guide strands of the wanted scale (decoded from
    that scale's map); ``frame`` pins the camera across density levels of
    the same hairstyle.
    """
    if density_level < 1:
        raise ValueError("density_level must be >= 1")
    all_pts = ss.all_points()
    if frame is None:
        frame = compute_frame(all_pts, size)
    center, scale = frame

    cov_hair = np.zeros((size, size))
    for s in ss.strands:
        _splat_polyline(cov_hair, _to_pixels(s.points, center, scale, size))

    cov = cov_hair
    if draw_silhouette:
        cov_sil = np.zeros((size, size))
        for line in [_head_circle(), *_SILHOUETTE]:
            _splat_polyline(cov_sil, _to_pixels(line, center, scale, size))
        cov = np.maximum(cov_hair, 0.35 * cov_sil)

    pixels = np.round(255.0 * (1.0 - np.clip(cov, 0.0, 1.0))).astype(np.uint8)
    return SketchImage(pixels=pixels, density_level=density_level)


# -- dataset builder ------------------------------------------------------------

@dataclass
class DatasetConfig:
    num_styles: int = 64
    augmentations: tuple[str, ...] = AUGMENT_KINDS
    include_base: bool = False
    strands_per_style: int = 800
    points_per_strand: int = 32
    map_resolution: int = 32
    num_scales: int = 3
    latent_dim: int = 8
    sketch_size: int = 64
    seed: int = 0
    clean_outliers: bool = True


def _random_style(rng: np.random.Generator, seed: int) -> StyleParams:
    return StyleParams(
        length=float(rng.uniform(0.2, 0.9)),
        curl_amplitude=float(rng.choice([0.0, 0.3, 0.7, 1.2])),
        curl_frequency=float(rng.uniform(2.0, 6.0)),
        parting=float(rng.uniform(-1.2, 1.2)),
        bangs_fraction=float(rng.choice([0.0, 0.15, 0.3])),
        gravity_droop=float(rng.uniform(1.0, 4.0)),
        seed=seed,
    )


def scale_sketches(
    ss: StrandSet,
    codec: StrandCodec,
    cfg_pyramid: PyramidConfig,
    sketch_size: int,
    clean_outliers: bool = True,
) -> tuple[list[SketchImage], StrandSet]:
    """Per-scale guide-strand sketches for one hairstyle, shared framing.

    The scale-k sketch draws exactly the strands decoded from that scale's
    map, which is what the alignment objective pairs against.
    """
    hm = strands_to_hairmap(ss, codec, cfg_pyramid.top_resolution)
    if clean_outliers:
        hm = remove_outliers(hm)
    pyr = decompose(hm, cfg_pyramid)
    frame = compute_frame(ss.all_points(), sketch_size)
    sketches = []
    decoded_full = None
    for k in range(1, cfg_pyramid.num_scales + 1):
        level = reconstruct(pyr, k)
        guides = hairmap_to_strands(level, codec, scalp=ss.scalp)
        sketches.append(rasterize_sketch(guides, k, sketch_size, frame=frame))
        if k == cfg_pyramid.num_scales:
            decoded_full = guides
    return sketches, decoded_full


def build_dataset(out_dir, cfg: DatasetConfig) -> dict:
    """Synthesize the corpus, fit the strand codec, and write strands,
    per-scale sketches and a manifest that reproduces everything."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(cfg.seed)
    scalp = ScalpModel()

    variants = (("none", 0.0),) if cfg.include_base else ()
    samples = []
    strand_sets = []
    for i in range(cfg.num_styles):
        params = _random_style(rng, seed=cfg.seed * 100003 + i)
        base = synthesize_hairstyle(
            params, scalp, n=cfg.strands_per_style, num_points=cfg.points_per_strand
        )
        chosen = variants + tuple(
            (kind, float(np.round(rng.uniform(0.2, 0.6), 6))) for kind in cfg.augmentations
        )
        for kind, mag in chosen:
            ss = base if kind == "none" else augment(base, kind, mag)
            sample_id = f"style{i:03d}_{kind}"
            samples.append(
                {"id": sample_id, "style": asdict(params), "augment": kind, "magnitude": mag}
            )
            strand_sets.append((sample_id, ss))

    codec = train_strand_codec(
        [ss for _, ss in strand_sets],
        StrandCodecConfig(
            mode="linear",
            latent_dim=cfg.latent_dim,
            points_per_strand=cfg.points_per_strand,
            seed=cfg.seed,
        ),
    )
    codec.save(out_dir / "strand_codec.ckpt")

    base_w = cfg.map_resolution // 2 ** (cfg.num_scales - 1)
    pyramid_cfg = PyramidConfig(num_scales=cfg.num_scales, base_w=base_w)
    for (sample_id, ss), record in zip(strand_sets, samples):
        fileio.save_strd(ss, out_dir / f"{sample_id}.strd")
        sketches, _ = scale_sketches(
            ss, codec, pyramid_cfg, cfg.sketch_size, cfg.clean_outliers
        )
        files = {"strd": f"{sample_id}.strd", "sketches": []}
        for k, sk in enumerate(sketches, start=1):
            name = f"{sample_id}.k{k}.png"
            sk.save_png(out_dir / name)
            files["sketches"].append(name)
        record["files"] = files

    manifest = {
        "version": 1,
        "config": {**asdict(cfg), "augmentations": list(cfg.augmentations)},
        "codec": "strand_codec.ckpt",
        "samples": samples,
    }
    with open(out_dir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return manifest


def load_dataset(
    dataset_dir, scalp: ScalpModel | None = None
) -> list[tuple[StrandSet, list[SketchImage]]]:
    dataset_dir = Path(dataset_dir)
    with open(dataset_dir / "manifest.json") as fh:
        manifest = json.load(fh)
    out = []
    for rec in manifest["samples"]:
        ss = fileio.load_strd(dataset_dir / rec["files"]["strd"], scalp=scalp)
        sketches = [
            SketchImage.load_png(dataset_dir / name, density_level=k)
            for k, name in enumerate(rec["files"]["sketches"], start=1)
        ]
        out.append((ss, sketches))
    return out
