"""Sketch conditioning: patch encoder, scale-token injection, dual fusion.

A small from-scratch patch transformer stands in for a large pretrained
backbone; the adaptation mechanism is the point.  Learnable per-scale
token sets are injected into the last third of the layers.  Injected
tokens share the layer's Q/K/V projections and feed the patch stream
through an extra attention read-out whose output projection starts at
zero, so an untrained injection leaves the encoder output exactly
unchanged and appended tokens never extend the sequence.

The alignment objective pulls the adapted embedding of a sketch at any
density toward a frozen copy's embedding of the density-matched sketch
(softmax cross-entropy on summary tokens, distinct temperatures).
"""

from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

TAU_TARGET = 0.1
TAU_ONLINE = 0.04


@dataclass
class SketchEncoderConfig:
    image_size: int = 64
    patch_size: int = 8
    layers: int = 6
    width: int = 64
    heads: int = 4
    num_scales: int = 3
    tokens_per_set: int = 4

    def __post_init__(self):
        if self.layers % 3 != 0:
            raise ValueError("layer count must be divisible by 3")
        if self.image_size % self.patch_size != 0:
            raise ValueError("image size must be a multiple of patch size")
        if self.width % self.heads != 0:
            raise ValueError("width must be divisible by heads")

    @property
    def num_patches(self) -> int:
        return (self.image_size // self.patch_size) ** 2

    @property
    def first_injected_layer(self) -> int:
        """0-based index of the first layer receiving scale tokens."""
        return 2 * self.layers // 3


@dataclass(frozen=True)
class SketchEmbedding:
    """Adapted sketch features: per-patch tokens plus one summary token."""

    patch_tokens: torch.Tensor  # (num_patches, width)
    summary_token: torch.Tensor  # (width,)
    scale_k: int

    def __post_init__(self):
        if self.patch_tokens.ndim != 2 or self.summary_token.ndim != 1:
            raise ValueError("patch tokens must be (N, W) and summary (W,)")
        if self.patch_tokens.shape[1] != self.summary_token.shape[0]:
            raise ValueError("patch and summary widths differ")

    def detached(self) -> "SketchEmbedding":
        return SketchEmbedding(
            self.patch_tokens.detach().clone(),
            self.summary_token.detach().clone(),
            self.scale_k,
        )


class ScaleTokens(nn.Module):
    """Learnable token table theta[scale][layer]; only the last third of
    the layers is ever injected, earlier entries exist but stay unused."""

    def __init__(self, cfg: SketchEncoderConfig):
        super().__init__()
        self.cfg = cfg
        self.tokens = nn.Parameter(
            torch.zeros(cfg.num_scales, cfg.layers, cfg.tokens_per_set, cfg.width)
        )

    def tokens_for(self, k: int, layer: int) -> torch.Tensor:
        if not 1 <= k <= self.cfg.num_scales:
            raise ValueError(f"scale {k} out of range 1..{self.cfg.num_scales}")
        return self.tokens[k - 1, layer]


class _EncoderBlock(nn.Module):
    def __init__(self, width: int, heads: int):
        super().__init__()
        self.norm1 = nn.LayerNorm(width)
        self.attn = nn.MultiheadAttention(width, heads, batch_first=True)
        self.norm2 = nn.LayerNorm(width)
        self.mlp = nn.Sequential(
            nn.Linear(width, 4 * width), nn.GELU(), nn.Linear(4 * width, width)
        )
        # Read-out for injected tokens; zero init keeps the untrained
        # injection an exact no-op.
        self.inject_readout = nn.Linear(width, width)
        nn.init.zeros_(self.inject_readout.weight)
        nn.init.zeros_(self.inject_readout.bias)

    def forward(self, x: torch.Tensor, theta: torch.Tensor | None = None) -> torch.Tensor:
        h = self.norm1(x)
        attn_out, _ = self.attn(h, h, h, need_weights=False)
        if theta is not None:
            th = theta.unsqueeze(0).expand(x.shape[0], -1, -1)
            inj, _ = self.attn(h, th, th, need_weights=False)
            attn_out = attn_out + self.inject_readout(inj)
        x = x + attn_out
        return x + self.mlp(self.norm2(x))


class SketchEncoder(nn.Module):
    """Patch transformer over binarized sketches with a class summary token."""

    def __init__(self, cfg: SketchEncoderConfig):
        super().__init__()
        self.cfg = cfg
        self.patch_embed = nn.Linear(cfg.patch_size * cfg.patch_size, cfg.width)
        self.cls_token = nn.Parameter(torch.zeros(1, 1, cfg.width))
        self.pos_embed = nn.Parameter(torch.zeros(1, cfg.num_patches + 1, cfg.width))
        nn.init.normal_(self.cls_token, std=0.02)
        nn.init.normal_(self.pos_embed, std=0.02)
        self.blocks = nn.ModuleList(
            _EncoderBlock(cfg.width, cfg.heads) for _ in range(cfg.layers)
        )
        self.norm = nn.LayerNorm(cfg.width)

    def _patchify(self, img: torch.Tensor) -> torch.Tensor:
        s, p = self.cfg.image_size, self.cfg.patch_size
        if img.shape[-2:] != (s, s):
            raise ValueError(f"expected {s}x{s} sketch, got {tuple(img.shape[-2:])}")
        x = img.reshape(-1, s // p, p, s // p, p)
        return x.permute(0, 1, 3, 2, 4).reshape(-1, self.cfg.num_patches, p * p)

    def forward(
        self, img: torch.Tensor, k: int | None = None, scale_tokens: ScaleTokens | None = None
    ) -> tuple[torch.Tensor, torch.Tensor]:
        """Returns (patch_tokens (B, N, W), summary (B, W)); injection of
        theta_k happens only in the last third of the layers."""
        if img.ndim == 2:
            img = img.unsqueeze(0)
        x = self.patch_embed(self._patchify(img))
        cls = self.cls_token.expand(x.shape[0], -1, -1)
        x = torch.cat([cls, x], dim=1) + self.pos_embed
        start = self.cfg.first_injected_layer
        for i, block in enumerate(self.blocks):
            theta = None
            if scale_tokens is not None and k is not None and i >= start:
                theta = scale_tokens.tokens_for(k, i)
            x = block(x, theta)
            if x.shape[1] != self.cfg.num_patches + 1:
                raise AssertionError("sequence length changed across a layer")
        x = self.norm(x)
        return x[:, 1:], x[:, 0]

    def make_frozen_copy(self) -> "SketchEncoder":
        frozen = copy.deepcopy(self)
        for p in frozen.parameters():
            p.requires_grad_(False)
        frozen.eval()
        return frozen


def sketch_to_tensor(pixels: np.ndarray) -> torch.Tensor:
    """Map 8-bit grayscale (background 255, strokes dark) to [0, 1] ink mass."""
    arr = np.asarray(pixels, dtype=np.float32)
    if arr.ndim != 2:
        raise ValueError(f"sketch must be a 2-D grayscale array, got {arr.shape}")
    return torch.from_numpy((255.0 - arr) / 255.0)


def encode_sketch(
    encoder: SketchEncoder,
    pixels: np.ndarray,
    k: int,
    scale_tokens: ScaleTokens | None = None,
) -> SketchEmbedding:
    """Encode one sketch image for target scale k."""
    if not 1 <= k <= encoder.cfg.num_scales:
        raise ValueError(f"scale {k} out of range 1..{encoder.cfg.num_scales}")
    patches, summary = encoder(sketch_to_tensor(pixels), k=k, scale_tokens=scale_tokens)
    return SketchEmbedding(patch_tokens=patches[0], summary_token=summary[0], scale_k=k)


def alignment_loss(
    adapted: torch.Tensor,
    target: torch.Tensor,
    tau_online: float = TAU_ONLINE,
    tau_target: float = TAU_TARGET,
) -> torch.Tensor:
    """Softmax cross-entropy pulling the adapted summary toward the frozen
    target summary; bounded below by the entropy of the target softmax."""
    if adapted.shape != target.shape:
        raise ValueError("adapted and target embeddings must share a width")
    p = torch.softmax(target.detach() / tau_target, dim=-1)
    log_q = torch.log_softmax(adapted / tau_online, dim=-1)
    return -(p * log_q).sum(dim=-1).mean()


def target_entropy(target: torch.Tensor, tau_target: float = TAU_TARGET) -> torch.Tensor:
    p = torch.softmax(target / tau_target, dim=-1)
    return -(p * torch.log(p)).sum(dim=-1).mean()


FUSION_MODES = ("dual", "global_only", "local_only")


class ConditionFuser(nn.Module):
    """Dual-level fusion: summary token is added to every strand token,
    patch tokens are prepended for attention (and excluded from output)."""

    def __init__(self, cond_width: int, model_width: int, mode: str = "dual"):
        super().__init__()
        if mode not in FUSION_MODES:
            raise ValueError(f"fusion mode must be one of {FUSION_MODES}")
        self.mode = mode
        self.patch_proj = nn.Linear(cond_width, model_width)
        self.summary_proj = nn.Linear(cond_width, model_width)

    def forward(
        self, patch_tokens: torch.Tensor, summary: torch.Tensor
    ) -> tuple[torch.Tensor, torch.Tensor]:
        """Returns (prefix (B, M', W_model), additive (B, W_model)); the
        inactive branch of an ablation collapses to an empty prefix or a
        zero additive term."""
        if patch_tokens.ndim == 2:
            patch_tokens = patch_tokens.unsqueeze(0)
        if summary.ndim == 1:
            summary = summary.unsqueeze(0)
        b = patch_tokens.shape[0]
        if self.mode == "global_only":
            prefix = patch_tokens.new_zeros(b, 0, self.patch_proj.out_features)
        else:
            prefix = self.patch_proj(patch_tokens)
        if self.mode == "local_only":
            additive = summary.new_zeros(b, self.summary_proj.out_features)
        else:
            additive = self.summary_proj(summary)
        return prefix, additive


def fuse_condition(
    fuser: ConditionFuser, emb: SketchEmbedding, strand_tokens: torch.Tensor
) -> tuple[torch.Tensor, int]:
    """Prepend projected patch tokens and add the projected summary to every
    strand token; returns (sequence (B, M'+N, W), prefix length)."""
    if strand_tokens.ndim == 2:
        strand_tokens = strand_tokens.unsqueeze(0)
    prefix, additive = fuser(emb.patch_tokens, emb.summary_token)
    if prefix.shape[-1] != strand_tokens.shape[-1]:
        raise ValueError(
            f"projected condition width {prefix.shape[-1]} != strand width "
            f"{strand_tokens.shape[-1]}"
        )
    fused = strand_tokens + additive[:, None, :]
    seq = torch.cat([prefix.expand(strand_tokens.shape[0], -1, -1), fused], dim=1)
    return seq, prefix.shape[1]
