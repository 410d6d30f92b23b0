"""Strand and latent codecs.

The strand codec turns a root-relative polyline into a D-vector.  Two
modes: ``linear`` is an exact principal-component projection (a
deterministic oracle for downstream tests), ``mlp-vae`` is a small
variational autoencoder trained by SGD.  Latent codecs compress residual
grids patch-wise into the generator's token grids; they are linear
(PCA over patches) with an exactly invertible identity configuration.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .checkpoint import (
    load_checkpoint,
    save_checkpoint,
    state_dict_to_tensors,
    tensors_to_state_dict,
)
from .strands import Strand, StrandSet


class UntrainedCodecError(RuntimeError):
    """Codec used before training."""


class TrainingDivergedError(RuntimeError):
    """Non-finite loss encountered during codec training."""


# -- strand codec ------------------------------------------------------------

@dataclass
class StrandCodecConfig:
    mode: str = "linear"  # linear | mlp-vae
    latent_dim: int = 8
    points_per_strand: int = 32
    hidden: int = 128
    epochs: int = 200
    batch_size: int = 128
    lr: float = 1e-3
    kl_beta: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("linear", "mlp-vae"):
            raise ValueError(f"unknown codec mode {self.mode!r}")
        if self.latent_dim < 1:
            raise ValueError("latent_dim must be >= 1")


def strand_features(points: np.ndarray) -> np.ndarray:
    """Root-relative flattened polyline: (points[1:] - root) as a vector."""
    pts = np.asarray(points, dtype=np.float64)
    return (pts[1:] - pts[0]).reshape(-1)


def features_to_points(feat: np.ndarray, root: np.ndarray) -> np.ndarray:
    disp = np.asarray(feat, dtype=np.float64).reshape(-1, 3)
    return np.concatenate([[np.zeros(3)], disp]) + np.asarray(root, dtype=np.float64)


class StrandVAE(nn.Module):
    """MLP encoder/decoder over normalized root-relative features."""

    def __init__(self, dim_in: int, latent_dim: int, hidden: int):
        super().__init__()
        self.encoder = nn.Sequential(
            nn.Linear(dim_in, hidden), nn.SiLU(),
            nn.Linear(hidden, hidden), nn.SiLU(),
            nn.Linear(hidden, 2 * latent_dim),
        )
        self.decoder = nn.Sequential(
            nn.Linear(latent_dim, hidden), nn.SiLU(),
            nn.Linear(hidden, hidden), nn.SiLU(),
            nn.Linear(hidden, dim_in),
        )
        self.latent_dim = latent_dim

    def encode(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        stats = self.encoder(x)
        return stats[..., : self.latent_dim], stats[..., self.latent_dim:]

    def decode(self, z: torch.Tensor) -> torch.Tensor:
        return self.decoder(z)

    def loss_terms(self, x: torch.Tensor, noise: torch.Tensor):
        """Reconstruction MSE + KL with explicit reparameterization noise
        (explicit so finite-difference probes can hold it fixed)."""
        mu, logvar = self.encode(x)
        z = mu + torch.exp(0.5 * logvar) * noise
        recon = self.decode(z)
        recon_loss = ((recon - x) ** 2).mean()
        kl = 0.5 * (mu**2 + torch.exp(logvar) - 1.0 - logvar).sum(dim=-1).mean()
        return recon_loss, kl


class StrandCodec:
    """Strand <-> D-vector codec; deterministic at inference."""

    def __init__(self, config: StrandCodecConfig):
        self.config = config
        self.mean_: np.ndarray | None = None
        self.basis_: np.ndarray | None = None  # (dim_in, D), orthonormal columns
        self.vae: StrandVAE | None = None
        self.norm_mean_: np.ndarray | None = None
        self.norm_scale_: float = 1.0
        self.losses: dict[str, float] = {}

    @property
    def latent_dim(self) -> int:
        return self.config.latent_dim

    @property
    def dim_in(self) -> int:
        return 3 * (self.config.points_per_strand - 1)

    @property
    def is_trained(self) -> bool:
        if self.config.mode == "linear":
            return self.basis_ is not None
        return self.vae is not None

    def _require_trained(self):
        if not self.is_trained:
            raise UntrainedCodecError(f"{self.config.mode} strand codec is untrained")

    def encode(self, s: Strand) -> np.ndarray:
        return self.encode_features(strand_features(s.points)[None])[0]

    def encode_features(self, feats: np.ndarray) -> np.ndarray:
        self._require_trained()
        feats = np.asarray(feats, dtype=np.float64)
        if self.config.mode == "linear":
            return (feats - self.mean_) @ self.basis_
        x = torch.from_numpy((feats - self.norm_mean_) / self.norm_scale_).float()
        with torch.no_grad():
            mu, _ = self.vae.encode(x)
        return mu.double().numpy()

    def decode_features(self, codes: np.ndarray) -> np.ndarray:
        self._require_trained()
        codes = np.asarray(codes, dtype=np.float64)
        if self.config.mode == "linear":
            return self.mean_ + codes @ self.basis_.T
        z = torch.from_numpy(codes).float()
        with torch.no_grad():
            recon = self.vae.decode(z)
        return recon.double().numpy() * self.norm_scale_ + self.norm_mean_

    def decode(self, code: np.ndarray, root: np.ndarray) -> Strand:
        feat = self.decode_features(np.asarray(code, dtype=np.float64)[None])[0]
        return Strand(features_to_points(feat, root))

    # -- persistence --------------------------------------------------------

    def save(self, path) -> None:
        self._require_trained()
        meta = {
            "kind": "strand-codec",
            "mode": self.config.mode,
            "latent_dim": self.config.latent_dim,
            "points_per_strand": self.config.points_per_strand,
            "hidden": self.config.hidden,
            "seed": self.config.seed,
            "losses": self.losses,
        }
        if self.config.mode == "linear":
            tensors = {"mean": self.mean_, "basis": self.basis_}
        else:
            tensors = state_dict_to_tensors(self.vae.state_dict())
            tensors["norm_mean"] = self.norm_mean_
            tensors["norm_scale"] = np.array([self.norm_scale_])
        save_checkpoint(path, tensors, meta)

    @classmethod
    def load(cls, path) -> "StrandCodec":
        tensors, meta = load_checkpoint(path)
        config = StrandCodecConfig(
            mode=meta["mode"],
            latent_dim=meta["latent_dim"],
            points_per_strand=meta["points_per_strand"],
            hidden=meta.get("hidden", 128),
            seed=meta.get("seed", 0),
        )
        codec = cls(config)
        codec.losses = meta.get("losses", {})
        if config.mode == "linear":
            codec.mean_ = tensors["mean"].astype(np.float64)
            codec.basis_ = tensors["basis"].astype(np.float64)
        else:
            codec.norm_mean_ = tensors.pop("norm_mean").astype(np.float64)
            codec.norm_scale_ = float(tensors.pop("norm_scale")[0])
            codec.vae = StrandVAE(codec.dim_in, config.latent_dim, config.hidden)
            codec.vae.load_state_dict(tensors_to_state_dict(tensors))
            codec.vae.eval()
        return codec


def _gather_features(strand_sets: list[StrandSet], p: int) -> np.ndarray:
    rows = []
    for ss in strand_sets:
        if ss.points_per_strand != p:
            raise ValueError(
                f"strand set has P={ss.points_per_strand}, codec expects {p}"
            )
        for s in ss.strands:
            rows.append(strand_features(s.points))
    return np.stack(rows)


def train_strand_codec(
    strand_sets: list[StrandSet], cfg: StrandCodecConfig, min_strands: int = 100
) -> StrandCodec:
    """Fit the strand codec: exact PCA for linear mode, SGD for the VAE."""
    feats = _gather_features(strand_sets, cfg.points_per_strand)
    if feats.shape[0] < min_strands:
        raise ValueError(f"need >= {min_strands} strands, got {feats.shape[0]}")
    codec = StrandCodec(cfg)
    if cfg.mode == "linear":
        mean = feats.mean(axis=0)
        centered = feats - mean
        # SVD of the data matrix: rows of vt are principal directions.
        _, svals, vt = np.linalg.svd(centered, full_matrices=False)
        basis = np.zeros((feats.shape[1], cfg.latent_dim))
        n_avail = min(cfg.latent_dim, vt.shape[0])
        basis[:, :n_avail] = vt[:n_avail].T
        codec.mean_ = mean
        codec.basis_ = basis
        recon = mean + (centered @ basis) @ basis.T
        codec.losses = {"recon_mse": float(((recon - feats) ** 2).mean())}
        return codec

    torch.manual_seed(cfg.seed)
    norm_mean = feats.mean(axis=0)
    norm_scale = float(feats.std()) or 1.0
    x_all = torch.from_numpy((feats - norm_mean) / norm_scale).float()
    vae = StrandVAE(feats.shape[1], cfg.latent_dim, cfg.hidden)
    opt = torch.optim.Adam(vae.parameters(), lr=cfg.lr)
    rng = np.random.default_rng(cfg.seed)
    gen = torch.Generator().manual_seed(cfg.seed)
    n = x_all.shape[0]
    last = {"recon": float("nan"), "kl": float("nan")}
    step = 0
    for _ in range(cfg.epochs):
        perm = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            batch = x_all[perm[start : start + cfg.batch_size]]
            noise = torch.randn(batch.shape[0], cfg.latent_dim, generator=gen)
            recon_loss, kl = vae.loss_terms(batch, noise)
            loss = recon_loss + cfg.kl_beta * kl
            if not torch.isfinite(loss):
                raise TrainingDivergedError(
                    f"non-finite loss at step {step}: recon={recon_loss.item()} kl={kl.item()}"
                )
            opt.zero_grad()
            loss.backward()
            opt.step()
            last = {"recon": recon_loss.item(), "kl": kl.item()}
            step += 1
    vae.eval()
    codec.vae = vae
    codec.norm_mean_ = norm_mean
    codec.norm_scale_ = norm_scale
    codec.losses = {"recon_mse": last["recon"], "kl": last["kl"]}
    return codec


def reconstruction_rmse(codec: StrandCodec, ss: StrandSet) -> float:
    """Positional RMSE of decode(encode(s)) over a strand set."""
    errs = []
    for s in ss.strands:
        rec = codec.decode(codec.encode(s), s.root)
        errs.append(((rec.points - s.points) ** 2).mean())
    return float(np.sqrt(np.mean(errs)))


# -- latent codec ------------------------------------------------------------

@dataclass(frozen=True)
class LatentGrid:
    """G x G x C token grid produced by a latent codec for one scale."""

    tokens: np.ndarray
    scale_k: int

    def __post_init__(self):
        tokens = np.asarray(self.tokens, dtype=np.float32)
        if tokens.ndim != 3 or tokens.shape[0] != tokens.shape[1]:
            raise ValueError(f"tokens must be (G, G, C), got {tokens.shape}")
        if not np.all(np.isfinite(tokens)):
            raise ValueError("latent grid contains non-finite values")
        tokens.setflags(write=False)
        object.__setattr__(self, "tokens", tokens)

    @property
    def grid_side(self) -> int:
        return self.tokens.shape[0]

    @property
    def channels(self) -> int:
        return self.tokens.shape[2]

    @property
    def token_count(self) -> int:
        return self.grid_side**2

    def flat(self) -> np.ndarray:
        return self.tokens.reshape(self.token_count, self.channels)


class LatentCodec:
    """Patch-linear codec for one pyramid scale.

    Splits the (W_k, W_k, D) residual grid into spatial_factor^2 patches
    and projects each onto ``channels_out`` principal directions; with
    channels_out == patch dim and an identity basis the map is lossless.
    """

    def __init__(
        self,
        scale_k: int,
        grid_w: int,
        latent_dim: int,
        spatial_factor: int,
        channels_out: int,
        identity_init: bool = False,
    ):
        if spatial_factor not in (2, 4):
            raise ValueError(f"spatial_factor must be 2 or 4, got {spatial_factor}")
        if grid_w % spatial_factor != 0:
            raise ValueError(f"grid W={grid_w} not divisible by factor {spatial_factor}")
        self.scale_k = scale_k
        self.grid_w = grid_w
        self.latent_dim = latent_dim
        self.spatial_factor = spatial_factor
        self.patch_dim = spatial_factor * spatial_factor * latent_dim
        if channels_out < 1 or channels_out > self.patch_dim:
            raise ValueError(
                f"channels_out must be in 1..{self.patch_dim}, got {channels_out}"
            )
        self.channels_out = channels_out
        self.token_side = grid_w // spatial_factor
        self.token_count = self.token_side**2
        self.mean_: np.ndarray | None = None
        self.basis_: np.ndarray | None = None
        # scalar or per-channel scale; tokens are divided by it on encode
        self.token_scale_: np.ndarray | float = 1.0
        if identity_init:
            if channels_out != self.patch_dim:
                raise ValueError("identity init needs channels_out == patch dim")
            self.mean_ = np.zeros(self.patch_dim)
            self.basis_ = np.eye(self.patch_dim)

    @property
    def is_trained(self) -> bool:
        return self.basis_ is not None

    def _require_trained(self):
        if not self.is_trained:
            raise UntrainedCodecError(f"latent codec for scale {self.scale_k} is untrained")

    def _to_patches(self, grid: np.ndarray) -> np.ndarray:
        f, g = self.spatial_factor, self.token_side
        if grid.shape != (self.grid_w, self.grid_w, self.latent_dim):
            raise ValueError(
                f"scale {self.scale_k} expects grid {(self.grid_w, self.grid_w, self.latent_dim)},"
                f" got {grid.shape}"
            )
        return (
            grid.reshape(g, f, g, f, self.latent_dim)
            .transpose(0, 2, 1, 3, 4)
            .reshape(g, g, self.patch_dim)
        )

    def _from_patches(self, patches: np.ndarray) -> np.ndarray:
        f, g = self.spatial_factor, self.token_side
        return (
            patches.reshape(g, g, f, f, self.latent_dim)
            .transpose(0, 2, 1, 3, 4)
            .reshape(self.grid_w, self.grid_w, self.latent_dim)
        )

    def encode(self, grid: np.ndarray) -> LatentGrid:
        self._require_trained()
        patches = self._to_patches(np.asarray(grid, dtype=np.float64))
        tokens = (patches - self.mean_) @ self.basis_ / self.token_scale_
        return LatentGrid(tokens=tokens.astype(np.float32), scale_k=self.scale_k)

    def decode(self, lg: LatentGrid) -> np.ndarray:
        self._require_trained()
        if lg.tokens.shape != (self.token_side, self.token_side, self.channels_out):
            raise ValueError(
                f"scale {self.scale_k} expects tokens "
                f"{(self.token_side, self.token_side, self.channels_out)}, got {lg.tokens.shape}"
            )
        patches = (lg.tokens.astype(np.float64) * self.token_scale_) @ self.basis_.T + self.mean_
        return self._from_patches(patches).astype(np.float32)

    def save(self, path) -> None:
        self._require_trained()
        meta = {
            "kind": "latent-codec",
            "scale_k": self.scale_k,
            "grid_w": self.grid_w,
            "latent_dim": self.latent_dim,
            "spatial_factor": self.spatial_factor,
            "channels_out": self.channels_out,
        }
        save_checkpoint(
            path,
            {
                "mean": self.mean_,
                "basis": self.basis_,
                "token_scale": np.atleast_1d(np.asarray(self.token_scale_, dtype=np.float64)),
            },
            meta,
        )

    @classmethod
    def load(cls, path) -> "LatentCodec":
        tensors, meta = load_checkpoint(path)
        codec = cls(
            scale_k=meta["scale_k"],
            grid_w=meta["grid_w"],
            latent_dim=meta["latent_dim"],
            spatial_factor=meta["spatial_factor"],
            channels_out=meta["channels_out"],
        )
        codec.mean_ = tensors["mean"].astype(np.float64)
        codec.basis_ = tensors["basis"].astype(np.float64)
        scale = tensors["token_scale"].astype(np.float64)
        codec.token_scale_ = float(scale[0]) if scale.size == 1 else scale
        return codec


def train_latent_codec(
    codec: LatentCodec,
    grids: list[np.ndarray],
    center: bool = True,
    normalize_tokens: bool = True,
) -> LatentCodec:
    """Fit the patch PCA for one scale from residual grids of that scale."""
    patches = np.concatenate(
        [codec._to_patches(np.asarray(g, dtype=np.float64)).reshape(-1, codec.patch_dim) for g in grids]
    )
    mean = patches.mean(axis=0) if center else np.zeros(codec.patch_dim)
    centered = patches - mean
    if codec.channels_out == codec.patch_dim:
        basis = np.eye(codec.patch_dim)  # complete basis: keep exact identity
    else:
        _, _, vt = np.linalg.svd(centered, full_matrices=False)
        basis = np.zeros((codec.patch_dim, codec.channels_out))
        n_avail = min(codec.channels_out, vt.shape[0])
        basis[:, :n_avail] = vt[:n_avail].T
    codec.mean_ = mean
    codec.basis_ = basis
    if normalize_tokens:
        proj = centered @ basis
        std = proj.std(axis=0)
        codec.token_scale_ = np.where(std > 1e-12, std, 1.0)
    else:
        codec.token_scale_ = 1.0
    return codec
