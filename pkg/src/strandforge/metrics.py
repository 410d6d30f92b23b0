"""Point-cloud generative metrics: CD, HD, MMD-CD, COV-CD, 1-NNA, PC-IoU.

Every metric has a brute-force path (exhaustive pairwise distances) and
an accelerated KD-tree path; the two agree to tight tolerance and the
brute-force path doubles as the reference oracle.

Distance conventions follow the respective formulas: Chamfer uses
squared Euclidean in both directions, Hausdorff is unsquared.  1-NNA
uses Chamfer distance between whole point sets.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

DEFAULT_EVAL_POINTS = 4096
DEFAULT_VOXEL_FRACTION = 1.0 / 32.0


def _as_points(x) -> np.ndarray:
    pts = np.asarray(x, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] < 1:
        raise ValueError(f"point set must be (N>=1, 3), got {pts.shape}")
    return pts


def _nn_sq_dists(src: np.ndarray, dst: np.ndarray, accelerated: bool) -> np.ndarray:
    """Squared distance from each src point to its nearest dst point."""
    if accelerated:
        d, _ = cKDTree(dst).query(src, k=1)
        return d**2
    diff = src[:, None, :] - dst[None, :, :]
    return (diff**2).sum(axis=2).min(axis=1)


def chamfer(x, y, accelerated: bool = True) -> float:
    """Symmetrized mean nearest-neighbor squared distance."""
    x, y = _as_points(x), _as_points(y)
    return float(
        _nn_sq_dists(x, y, accelerated).mean() + _nn_sq_dists(y, x, accelerated).mean()
    )


def hausdorff(x, y, accelerated: bool = True) -> float:
    """Max over both directed max-min (unsquared) distances."""
    x, y = _as_points(x), _as_points(y)
    dxy = np.sqrt(_nn_sq_dists(x, y, accelerated).max())
    dyx = np.sqrt(_nn_sq_dists(y, x, accelerated).max())
    return float(max(dxy, dyx))


def _cd_matrix(refs, gens, accelerated: bool) -> np.ndarray:
    refs = [_as_points(r) for r in refs]
    gens = [_as_points(g) for g in gens]
    out = np.zeros((len(gens), len(refs)))
    if accelerated:
        ref_trees = [cKDTree(r) for r in refs]
        gen_trees = [cKDTree(g) for g in gens]
        for i, g in enumerate(gens):
            for j, r in enumerate(refs):
                d_gr = ref_trees[j].query(g, k=1)[0]
                d_rg = gen_trees[i].query(r, k=1)[0]
                out[i, j] = (d_gr**2).mean() + (d_rg**2).mean()
    else:
        for i, g in enumerate(gens):
            for j, r in enumerate(refs):
                out[i, j] = chamfer(g, r, accelerated=False)
    return out


def mmd_cd(refs, gens, accelerated: bool = True) -> float:
    """Mean over generated sets of the Chamfer distance to the closest reference."""
    cd = _cd_matrix(refs, gens, accelerated)
    return float(cd.min(axis=1).mean())


def cov_cd(refs, gens, accelerated: bool = True) -> float:
    """Fraction of reference sets that are the closest reference of some
    generated set (argmin ties resolve to the first index)."""
    cd = _cd_matrix(refs, gens, accelerated)
    matched = {int(np.argmin(row)) for row in cd}
    return float(len(matched) / len(refs))


def one_nna(refs, gens, accelerated: bool = True) -> float:
    """1-nearest-neighbor two-sample accuracy over the union of both set
    lists, with Chamfer distance between sets; 0.5 means indistinguishable."""
    sets = list(refs) + list(gens)
    n = len(sets)
    if n < 2:
        raise ValueError("need at least two point sets in the union")
    domain = np.array([0] * len(refs) + [1] * len(gens))
    dist = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            d = chamfer(sets[i], sets[j], accelerated=accelerated)
            dist[i, j] = dist[j, i] = d
    np.fill_diagonal(dist, np.inf)
    nn = dist.argmin(axis=1)  # argmin takes the first index on ties
    return float((domain[nn] == domain).mean())


def voxelize(x, voxel: float) -> set[tuple[int, int, int]]:
    """Occupied-voxel set on the lattice anchored at the origin."""
    if voxel <= 0:
        raise ValueError("voxel size must be positive")
    idx = np.floor(_as_points(x) / voxel).astype(np.int64)
    return {tuple(row) for row in idx}


def default_voxel_size(x, y) -> float:
    pts = np.concatenate([_as_points(x), _as_points(y)])
    diag = float(np.linalg.norm(pts.max(axis=0) - pts.min(axis=0)))
    return diag * DEFAULT_VOXEL_FRACTION if diag > 0 else 1.0


def pc_iou(x, y, voxel: float | None = None) -> float:
    """Intersection-over-union of the occupied voxel sets of two clouds."""
    if voxel is None:
        voxel = default_voxel_size(x, y)
    vx, vy = voxelize(x, voxel), voxelize(y, voxel)
    union = vx | vy
    return float(len(vx & vy) / len(union)) if union else 1.0


def sample_eval_points(points: np.ndarray, n: int = DEFAULT_EVAL_POINTS, seed: int = 0) -> np.ndarray:
    """Seeded subsample used by the evaluation protocols."""
    pts = _as_points(points)
    if pts.shape[0] <= n:
        return pts
    rng = np.random.default_rng(seed)
    idx = rng.choice(pts.shape[0], size=n, replace=False)
    return pts[idx]


# -- evaluation protocol ------------------------------------------------------

def build_report(
    refs: list[np.ndarray],
    gens_uncond: list[np.ndarray],
    conditional_pairs: list[tuple[np.ndarray, np.ndarray]],
    voxel: float | None = None,
    seed: int = 0,
) -> dict:
    """Assemble the metric report from point sets.

    Unconditional block compares the generated distribution to the
    references; conditional block averages per-pair geometric consistency.
    """
    report: dict[str, dict] = {}

    def entry(value: float, n_refs: int, n_gens: int, vox: float | None) -> dict:
        return {
            "value": float(value),
            "n_refs": n_refs,
            "n_gens": n_gens,
            "voxel": vox,
            "seed": seed,
        }

    if refs and gens_uncond:
        report["mmd_cd"] = entry(mmd_cd(refs, gens_uncond), len(refs), len(gens_uncond), None)
        report["cov_cd"] = entry(cov_cd(refs, gens_uncond), len(refs), len(gens_uncond), None)
        report["one_nna"] = entry(one_nna(refs, gens_uncond), len(refs), len(gens_uncond), None)

    if conditional_pairs:
        ious, cds, hds = [], [], []
        vox_used = voxel
        for target, gen in conditional_pairs:
            v = vox_used if vox_used is not None else default_voxel_size(target, gen)
            ious.append(pc_iou(target, gen, v))
            cds.append(chamfer(target, gen))
            hds.append(hausdorff(target, gen))
        n = len(conditional_pairs)
        report["pc_iou"] = entry(float(np.mean(ious)), n, n, voxel)
        report["cd"] = entry(float(np.mean(cds)), n, n, None)
        report["hd"] = entry(float(np.mean(hds)), n, n, None)
    return report


def report_markdown(report: dict) -> str:
    """Markdown table mirroring the unconditional / conditional split."""
    lines = []
    uncond = [("MMD-CD", "mmd_cd"), ("COV-CD", "cov_cd"), ("1-NNA", "one_nna")]
    cond = [("PC-IoU", "pc_iou"), ("CD", "cd"), ("Hausdorff", "hd")]
    for title, rows in (("Unconditional", uncond), ("Conditional", cond)):
        present = [(label, key) for label, key in rows if key in report]
        if not present:
            continue
        lines.append(f"### {title}")
        lines.append("| Metric | Value |")
        lines.append("|---|---|")
        for label, key in present:
            lines.append(f"| {label} | {report[key]['value']:.6g} |")
        lines.append("")
    return "\n".join(lines)


def evaluate_report(dataset_dir, checkpoint_dir, cfg: dict) -> dict:
    """Run the generation protocols against a dataset and emit the report.

    Imports the pipeline lazily to keep the metric suite dependency-free.
    """
    from .pipeline import HairPipeline
    from . import sketchlab

    dataset_dir = Path(dataset_dir)
    pipe = HairPipeline.load(checkpoint_dir)
    seed = int(cfg.get("seed", 0))
    n_points = int(cfg.get("eval_points", DEFAULT_EVAL_POINTS))
    n_uncond = int(cfg.get("unconditional_samples", 8))
    max_cond = int(cfg.get("conditional_samples", 8))
    voxel = cfg.get("voxel")

    samples = sketchlab.load_dataset(dataset_dir, scalp=pipe.scalp)
    refs = [
        sample_eval_points(ss.all_points(), n_points, seed + i)
        for i, (ss, _) in enumerate(samples)
    ]

    gens_uncond = []
    for i in range(n_uncond):
        out = pipe.generate(sketch=None, seed=seed + 1000 + i)
        gens_uncond.append(
            sample_eval_points(out.strand_sets[-1].all_points(), n_points, seed + i)
        )

    conditional_pairs = []
    for i, (ss, sketches) in enumerate(samples[:max_cond]):
        out = pipe.generate(sketch=sketches[-1], seed=seed + 2000 + i)
        conditional_pairs.append(
            (
                sample_eval_points(ss.all_points(), n_points, seed + i),
                sample_eval_points(out.strand_sets[-1].all_points(), n_points, seed + i),
            )
        )

    report = build_report(refs, gens_uncond, conditional_pairs, voxel=voxel, seed=seed)
    out_dir = Path(cfg.get("output_dir", dataset_dir))
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "report.json", "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
    with open(out_dir / "report.md", "w") as fh:
        fh.write(report_markdown(report))
    return report
