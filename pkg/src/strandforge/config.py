"""Pipeline configuration: desk-scale defaults with full-scale values
selectable; JSON round trip for the CLI and service."""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass
from pathlib import Path

ENV_CONFIG_VAR = "STRANDFORGE_CONFIG"


@dataclass
class PipelineConfig:
    # geometry / encoding
    points_per_strand: int = 32
    latent_dim: int = 8
    map_resolution: int = 32
    num_scales: int = 3
    spatial_factors: tuple[int, ...] = (2, 2, 2)
    latent_channels: tuple[int, ...] = (32, 32, 32)
    clean_outliers: bool = True
    # conditioner
    sketch_size: int = 64
    cond_patch_size: int = 8
    cond_layers: int = 6
    cond_width: int = 64
    cond_heads: int = 4
    tokens_per_set: int = 4
    # generator
    gen_width: int = 64
    gen_heads: int = 4
    layers_enc: int = 2
    layers_dec: int = 2
    diffusion_T: int = 50
    beta_start: float = 1e-3
    beta_end: float = 0.24
    infer_iters: int = 8
    cfg_drop_prob: float = 0.1
    cfg_scale: float = 1.5
    noise_inject_tmax: int = 5
    head_width: int = 128
    head_depth: int = 2
    diffusion_batch_mul: int = 2
    fusion_mode: str = "dual"
    # training
    align_weight: float = 0.5
    align_on: str = "summary"  # summary | all
    lr: float = 2e-3
    seed: int = 0

    def __post_init__(self):
        self.spatial_factors = tuple(self.spatial_factors)
        self.latent_channels = tuple(self.latent_channels)
        if len(self.spatial_factors) != self.num_scales:
            raise ValueError("one spatial factor per scale required")
        if len(self.latent_channels) != self.num_scales:
            raise ValueError("one latent channel width per scale required")
        if self.map_resolution % 2 ** (self.num_scales - 1) != 0:
            raise ValueError("map resolution must halve K-1 times")

    @property
    def base_w(self) -> int:
        return self.map_resolution // 2 ** (self.num_scales - 1)

    def scale_resolution(self, k: int) -> int:
        return self.base_w * 2 ** (k - 1)

    def token_side(self, k: int) -> int:
        return self.scale_resolution(k) // self.spatial_factors[k - 1]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["spatial_factors"] = list(self.spatial_factors)
        d["latent_channels"] = list(self.latent_channels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        return cls(**d)

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def desk_config(**overrides) -> PipelineConfig:
    return PipelineConfig(**overrides)


def full_scale_config() -> PipelineConfig:
    """Full-scale values as reported; not trained at desk scale."""
    return PipelineConfig(
        points_per_strand=100,
        latent_dim=64,
        map_resolution=128,
        num_scales=3,
        spatial_factors=(2, 4, 4),
        latent_channels=(64, 64, 64),
        sketch_size=256,
        cond_patch_size=16,
        cond_layers=12,
        cond_width=768,
        cond_heads=12,
        gen_width=768,
        gen_heads=12,
        layers_enc=12,
        layers_dec=12,
        diffusion_T=1000,
        beta_start=1e-4,
        beta_end=2e-2,
        noise_inject_tmax=49,
        infer_iters=64,
        head_width=1024,
        head_depth=3,
        diffusion_batch_mul=4,
    )


def load_json_config(path: str | os.PathLike | None) -> dict:
    """Read a JSON config file; STRANDFORGE_CONFIG overrides the path."""
    env = os.environ.get(ENV_CONFIG_VAR)
    if env:
        path = env
    if path is None:
        raise ValueError(f"no config path given and {ENV_CONFIG_VAR} unset")
    with open(Path(path)) as fh:
        return json.load(fh)
