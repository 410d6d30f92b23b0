"""Masked next-scale generator over latent token grids.

Encoder/decoder transformers process the unmasked tokens of one scale
plus the sketch condition and nearest-upsampled context from all coarser
scales; the decoder emits a per-token conditioning vector that drives an
MLP diffusion head.  Training minimizes denoising error on masked
positions only; inference reveals tokens over a cosine schedule ordered
by decoder confidence, sampling each new token with a full reverse
diffusion chain (classifier-free guidance optional).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from scipy.stats import truncnorm
from torch import nn

from .conditioner import ConditionFuser, SketchEmbedding
from .diffusion import DiffusionHead, DiffusionSchedule

MASK_RATIO_MIN = 0.7
MASK_RATIO_STD = 0.25


@dataclass
class GeneratorConfig:
    num_scales: int = 3
    token_sides: tuple[int, ...] = (4, 8, 16)
    token_channels: tuple[int, ...] = (32, 32, 32)
    width: int = 64
    heads: int = 4
    layers_enc: int = 2
    layers_dec: int = 2
    cond_width: int = 64
    num_patch_tokens: int = 64
    diffusion_T: int = 50
    # Desk beta range keeps terminal alpha_bar ~ e^-6 at T=50 (the
    # full-scale 1e-4..2e-2 range only mixes fully at T=1000).
    beta_start: float = 1e-3
    beta_end: float = 0.24
    infer_iters: int = 8
    cfg_drop_prob: float = 0.1
    cfg_scale: float = 1.0
    noise_inject_tmax: int = 5
    head_width: int = 256
    head_depth: int = 3
    diffusion_batch_mul: int = 4
    fusion_mode: str = "dual"
    seed: int = 0

    def __post_init__(self):
        if self.width % self.heads != 0:
            raise ValueError("width must be divisible by heads")
        if not self.noise_inject_tmax < 50:
            raise ValueError("noise_inject_tmax must be < 50")
        if len(self.token_sides) != self.num_scales:
            raise ValueError("token_sides must list one side per scale")
        if len(self.token_channels) != self.num_scales:
            raise ValueError("token_channels must list one width per scale")

    def tokens_at(self, k: int) -> int:
        return self.token_sides[k - 1] ** 2


class _Block(nn.Module):
    def __init__(self, width: int, heads: int):
        super().__init__()
        self.norm1 = nn.LayerNorm(width)
        self.attn = nn.MultiheadAttention(width, heads, batch_first=True)
        self.norm2 = nn.LayerNorm(width)
        self.mlp = nn.Sequential(
            nn.Linear(width, 4 * width), nn.GELU(), nn.Linear(4 * width, width)
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = self.norm1(x)
        a, _ = self.attn(h, h, h, need_weights=False)
        x = x + a
        return x + self.mlp(self.norm2(x))


def nearest_upsample_grid(grid: torch.Tensor, side_out: int) -> torch.Tensor:
    """Nearest-neighbor resize of (B, G, G, C) grids to (B, side_out, side_out, C)."""
    g_in = grid.shape[1]
    idx = torch.floor(
        (torch.arange(side_out, dtype=torch.float64) + 0.5) * g_in / side_out
    ).long()
    return grid[:, idx][:, :, idx]


class NextScaleGenerator(nn.Module):
    def __init__(self, cfg: GeneratorConfig):
        super().__init__()
        self.cfg = cfg
        w = cfg.width
        self.schedule = DiffusionSchedule(cfg.diffusion_T, cfg.beta_start, cfg.beta_end)
        self.token_in = nn.ModuleList(
            nn.Linear(c, w) for c in cfg.token_channels
        )
        self.enc_pos = nn.ParameterList(
            nn.Parameter(torch.zeros(cfg.tokens_at(k), w))
            for k in range(1, cfg.num_scales + 1)
        )
        self.dec_pos = nn.ParameterList(
            nn.Parameter(torch.zeros(cfg.tokens_at(k), w))
            for k in range(1, cfg.num_scales + 1)
        )
        self.scale_emb = nn.Parameter(torch.zeros(cfg.num_scales, w))
        self.mask_token = nn.Parameter(torch.zeros(w))
        self.prev_proj = nn.ModuleList(
            nn.Linear(c, w) for c in cfg.token_channels[:-1]
        )
        self.cond_pos_enc = nn.Parameter(torch.zeros(cfg.num_patch_tokens, w))
        self.cond_pos_dec = nn.Parameter(torch.zeros(cfg.num_patch_tokens, w))
        self.null_patch = nn.Parameter(torch.zeros(cfg.cond_width))
        self.null_summary = nn.Parameter(torch.zeros(cfg.cond_width))
        self.fuser = ConditionFuser(cfg.cond_width, w, cfg.fusion_mode)
        self.encoder = nn.ModuleList(_Block(w, cfg.heads) for _ in range(cfg.layers_enc))
        self.enc_norm = nn.LayerNorm(w)
        self.decoder = nn.ModuleList(_Block(w, cfg.heads) for _ in range(cfg.layers_dec))
        self.dec_norm = nn.LayerNorm(w)
        self.heads_by_scale = nn.ModuleList(
            DiffusionHead(c, w, cfg.head_width, cfg.head_depth, self.schedule)
            for c in cfg.token_channels
        )
        for p in (
            self.scale_emb,
            self.mask_token,
            self.cond_pos_enc,
            self.cond_pos_dec,
            self.null_patch,
            self.null_summary,
            *self.enc_pos,
            *self.dec_pos,
        ):
            nn.init.normal_(p, std=0.02)

    # -- condition plumbing --------------------------------------------------

    def null_condition(self, batch: int) -> tuple[torch.Tensor, torch.Tensor]:
        patch = self.null_patch.expand(batch, self.cfg.num_patch_tokens, -1)
        summary = self.null_summary.expand(batch, -1)
        return patch, summary

    def condition_tensors(
        self, embs: list[SketchEmbedding | None]
    ) -> tuple[torch.Tensor, torch.Tensor]:
        patches, summaries = [], []
        for e in embs:
            if e is None:
                patches.append(self.null_patch.expand(self.cfg.num_patch_tokens, -1))
                summaries.append(self.null_summary)
            else:
                patches.append(e.patch_tokens)
                summaries.append(e.summary_token)
        return torch.stack(patches), torch.stack(summaries)

    def _prev_context(self, k: int, prev: list[torch.Tensor], batch: int) -> torch.Tensor:
        side = self.cfg.token_sides[k - 1]
        ctx = torch.zeros(batch, side * side, self.cfg.width)
        for i, grid in enumerate(prev):
            up = nearest_upsample_grid(grid, side)
            ctx = ctx + self.prev_proj[i](up).reshape(batch, side * side, -1)
        return ctx

    # -- context transformer ---------------------------------------------------

    def forward_context(
        self,
        tokens: torch.Tensor,
        mask: torch.Tensor,
        k: int,
        cond: tuple[torch.Tensor, torch.Tensor] | None,
        prev: list[torch.Tensor],
    ) -> torch.Tensor:
        """Encode unmasked tokens + condition, decode the full sequence to
        per-token conditioning z (B, N, width).

        ``mask`` must flag the same number of positions in every row so the
        unmasked tokens of a batch pack into a rectangle.
        """
        b, n = mask.shape
        if len(prev) != k - 1:
            raise ValueError(f"scale {k} needs previous grids 1..{k - 1}, got {len(prev)}")
        if cond is None:
            cond = self.null_condition(b)
        patch, summary = cond
        prefix, additive = self.fuser(patch, summary)
        prev_ctx = self._prev_context(k, prev, b)
        base = (
            self.token_in[k - 1](tokens)
            + self.enc_pos[k - 1]
            + self.scale_emb[k - 1]
            + prev_ctx
            + additive[:, None, :]
        )

        keep = ~mask
        n_keep = int(keep[0].sum())
        if int(keep.sum()) != b * n_keep:
            raise ValueError("mask must drop the same count in every batch row")
        enc_tokens = base[keep].reshape(b, n_keep, base.shape[-1])
        enc_prefix = prefix + self.cond_pos_enc[: prefix.shape[1]]
        x = torch.cat([enc_prefix, enc_tokens], dim=1)
        if x.shape[1] > 0:
            for block in self.encoder:
                x = block(x)
            x = self.enc_norm(x)
        m = prefix.shape[1]
        enc_out_prefix, enc_out_tokens = x[:, :m], x[:, m:]

        dec_tokens = self.mask_token.expand(b, n, -1).clone()
        dec_tokens[keep] = enc_out_tokens.reshape(-1, self.cfg.width)
        dec_tokens = (
            dec_tokens
            + self.dec_pos[k - 1]
            + self.scale_emb[k - 1]
            + prev_ctx
            + additive[:, None, :]
        )
        dec_prefix = enc_out_prefix + self.cond_pos_dec[: m]
        y = torch.cat([dec_prefix, dec_tokens], dim=1)
        for block in self.decoder:
            y = block(y)
        y = self.dec_norm(y)
        return y[:, m:]

    # -- training ---------------------------------------------------------------

    def diffusion_loss(
        self,
        z: torch.Tensor,
        target: torch.Tensor,
        mask: torch.Tensor,
        k: int,
        t: torch.Tensor | None = None,
        noise: torch.Tensor | None = None,
        generator: torch.Generator | None = None,
        batch_mul: int | None = None,
    ) -> torch.Tensor:
        """Denoising loss restricted to masked positions: unmasked target
        entries never contribute (their perturbation leaves the loss fixed)."""
        flat_mask = mask.reshape(-1)
        z_rows = z.reshape(-1, z.shape[-1])[flat_mask]
        tgt_rows = target.reshape(-1, target.shape[-1])[flat_mask]
        mul = 1 if t is not None else (batch_mul or self.cfg.diffusion_batch_mul)
        if mul > 1:
            z_rows = z_rows.repeat(mul, 1)
            tgt_rows = tgt_rows.repeat(mul, 1)
        r = z_rows.shape[0]
        if t is None:
            t = torch.randint(1, self.cfg.diffusion_T + 1, (r,), generator=generator)
        if noise is None:
            noise = torch.randn(r, tgt_rows.shape[-1], generator=generator)
        x_t = self.schedule.forward_process(tgt_rows, t, noise)
        eps_hat = self.heads_by_scale[k - 1](x_t, z_rows, t)
        return ((noise - eps_hat) ** 2).sum(dim=-1).mean()

    def sample_mask(
        self, batch: int, n: int, rng: np.random.Generator
    ) -> torch.Tensor:
        """Truncated-normal mask ratio (mean 1.0, std 0.25, floor 0.7)
        shared across the batch, random positions per sample."""
        ratio = float(
            truncnorm.rvs(
                (MASK_RATIO_MIN - 1.0) / MASK_RATIO_STD,
                0.0,
                loc=1.0,
                scale=MASK_RATIO_STD,
                random_state=rng,
            )
        )
        n_mask = int(np.clip(math.ceil(ratio * n), 1, n))
        mask = np.zeros((batch, n), dtype=bool)
        for i in range(batch):
            mask[i, rng.permutation(n)[:n_mask]] = True
        return torch.from_numpy(mask)

    def corrupt_prev(
        self,
        prev: list[torch.Tensor],
        rng: np.random.Generator,
        generator: torch.Generator | None = None,
    ) -> list[torch.Tensor]:
        """Forward-diffuse previous-scale latents at a random early step to
        simulate accumulated upsampling error."""
        out = []
        for grid in prev:
            b = grid.shape[0]
            t = torch.from_numpy(
                rng.integers(1, self.cfg.noise_inject_tmax + 1, size=b)
            )
            noise = torch.randn(grid.shape, generator=generator)
            out.append(self.schedule.forward_process(grid, t, noise))
        return out

    def train_step(
        self,
        tokens: torch.Tensor,
        k: int,
        cond_embs: list[SketchEmbedding | None] | None,
        prev: list[torch.Tensor],
        rng: np.random.Generator,
        generator: torch.Generator | None = None,
    ) -> torch.Tensor:
        """One training loss evaluation for scale k on a (B, N, C_k) batch."""
        b, n = tokens.shape[0], tokens.shape[1]
        mask = self.sample_mask(b, n, rng)
        if cond_embs is None:
            cond = None
        else:
            embs: list[SketchEmbedding | None] = [
                None if rng.random() < self.cfg.cfg_drop_prob else e for e in cond_embs
            ]
            cond = self.condition_tensors(embs)
        if k >= 2:
            prev = self.corrupt_prev(prev, rng, generator)
        z = self.forward_context(tokens, mask, k, cond, prev)
        loss = self.diffusion_loss(z, tokens, mask, k, generator=generator)
        if not torch.isfinite(loss):
            raise RuntimeError(f"non-finite generator loss at scale {k}")
        return loss

    # -- inference ----------------------------------------------------------------

    def _reveal_plan(self, n: int, iters: int) -> list[int]:
        """Tokens revealed per round under the cosine unmasking schedule;
        at least one per round, everything by the final round."""
        plan = []
        cur = n
        for s in range(1, iters + 1):
            target = int(math.floor(n * math.cos(math.pi / 2.0 * s / iters)))
            if s == iters:
                target = 0
            reveal = max(1, cur - target)
            remaining_rounds = iters - s
            reveal = min(reveal, cur - remaining_rounds)
            reveal = max(reveal, 0) if cur > 0 else 0
            plan.append(reveal)
            cur -= reveal
        return plan

    @torch.no_grad()
    def generate_scale(
        self,
        k: int,
        prev: list[torch.Tensor],
        cond_emb: SketchEmbedding | None,
        generator: torch.Generator,
        cfg_scale: float | None = None,
        infer_iters: int | None = None,
    ) -> torch.Tensor:
        """Iterative masked decoding of one scale; returns (G, G, C_k).

        cfg_scale 0 reproduces unconditional sampling and 1 reproduces
        pure conditional sampling bit-exactly (single-branch fast paths).
        """
        s_scale = self.cfg.cfg_scale if cfg_scale is None else cfg_scale
        iters = infer_iters if infer_iters is not None else self.cfg.infer_iters
        side = self.cfg.token_sides[k - 1]
        c = self.cfg.token_channels[k - 1]
        n = side * side
        iters = min(iters, n)
        tokens = torch.zeros(1, n, c)
        mask = torch.ones(1, n, dtype=torch.bool)
        plan = self._reveal_plan(n, iters)
        need_cond = cond_emb is not None and s_scale != 0.0
        need_null = cond_emb is None or s_scale != 1.0
        cond = self.condition_tensors([cond_emb]) if need_cond else None
        head = self.heads_by_scale[k - 1]
        for reveal in plan:
            if reveal <= 0:
                continue
            z_c = self.forward_context(tokens, mask, k, cond, prev) if need_cond else None
            z_n = self.forward_context(tokens, mask, k, None, prev) if need_null else None
            z_conf = z_c if need_cond else z_n
            masked_idx = torch.nonzero(mask[0], as_tuple=False).squeeze(1).numpy()
            conf = torch.linalg.norm(z_conf[0, masked_idx], dim=-1).numpy()
            order = np.lexsort((masked_idx, -conf))
            chosen = masked_idx[order[:reveal]]
            rows = torch.from_numpy(chosen).long()
            if need_cond and need_null:
                sampled = head.sample(
                    z_c[0, rows], generator, z_null=z_n[0, rows], cfg_scale=s_scale
                )
            elif need_cond:
                sampled = head.sample(z_c[0, rows], generator)
            else:
                sampled = head.sample(z_n[0, rows], generator)
            tokens[0, rows] = sampled
            mask[0, rows] = False
        return tokens.reshape(side, side, c)

    @torch.no_grad()
    def generate_full(
        self,
        cond_embs: list[SketchEmbedding | None] | None,
        seed: int,
        cfg_scale: float | None = None,
        infer_iters: int | None = None,
        upto_k: int | None = None,
        on_scale=None,
    ) -> list[np.ndarray]:
        """Generate scales coarse-to-fine; every intermediate grid is a
        decodable hairstyle.  Deterministic for a fixed seed."""
        if cond_embs is not None and len(cond_embs) != self.cfg.num_scales:
            raise ValueError("need one condition embedding per scale (or None)")
        last = self.cfg.num_scales if upto_k is None else upto_k
        if not 1 <= last <= self.cfg.num_scales:
            raise ValueError(f"upto_k {last} out of range 1..{self.cfg.num_scales}")
        generator = torch.Generator().manual_seed(seed)
        prev: list[torch.Tensor] = []
        out: list[np.ndarray] = []
        for k in range(1, last + 1):
            emb = cond_embs[k - 1] if cond_embs is not None else None
            grid = self.generate_scale(
                k, prev, emb, generator, cfg_scale=cfg_scale, infer_iters=infer_iters
            )
            prev.append(grid.unsqueeze(0))
            out.append(grid.numpy().copy())
            if on_scale is not None:
                on_scale(k, out[-1])
        return out
