"""DDPM machinery: noise schedule, forward/reverse steps, MLP denoiser head."""

from __future__ import annotations

import math

import numpy as np
import torch
from torch import nn


class DiffusionSchedule:
    """Linear-beta DDPM schedule; timesteps are 1-based, alpha_bar(0) = 1."""

    def __init__(self, num_steps: int, beta_start: float = 1e-4, beta_end: float = 2e-2):
        if num_steps < 1:
            raise ValueError("need at least one diffusion step")
        self.num_steps = num_steps
        self.betas = np.linspace(beta_start, beta_end, num_steps, dtype=np.float64)
        self.alphas = 1.0 - self.betas
        self.alpha_bars = np.cumprod(self.alphas)
        if not np.all(np.diff(self.alpha_bars) < 0):
            raise ValueError("alpha_bar must be strictly decreasing")
        if np.any(self.alpha_bars <= 0):
            raise ValueError("alpha_bar must stay positive")

    def alpha_bar(self, t: int) -> float:
        """Cumulative signal fraction after t steps (t=0 means clean data)."""
        if t == 0:
            return 1.0
        return float(self.alpha_bars[t - 1])

    def _coeffs(self, t: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        ab = torch.from_numpy(self.alpha_bars).to(t.device)[t - 1]
        return torch.sqrt(ab), torch.sqrt(1.0 - ab)

    def forward_process(
        self, x0: torch.Tensor, t: torch.Tensor, noise: torch.Tensor
    ) -> torch.Tensor:
        """Sample x_t = sqrt(ab_t) x0 + sqrt(1 - ab_t) noise."""
        c0, c1 = self._coeffs(t)
        shape = (-1,) + (1,) * (x0.ndim - 1)
        return c0.reshape(shape).to(x0.dtype) * x0 + c1.reshape(shape).to(x0.dtype) * noise

    def reverse_step(
        self,
        x_t: torch.Tensor,
        eps_hat: torch.Tensor,
        t: int,
        noise: torch.Tensor | None = None,
    ) -> torch.Tensor:
        """One posterior step x_t -> x_{t-1}; adds no noise at t = 1."""
        if not 1 <= t <= self.num_steps:
            raise ValueError(f"t={t} outside 1..{self.num_steps}")
        beta = self.betas[t - 1]
        alpha = self.alphas[t - 1]
        ab_t = self.alpha_bars[t - 1]
        mean = (x_t - beta / math.sqrt(1.0 - ab_t) * eps_hat) / math.sqrt(alpha)
        if t == 1:
            return mean
        ab_prev = self.alpha_bars[t - 2]
        var = (1.0 - ab_prev) / (1.0 - ab_t) * beta
        if noise is None:
            noise = torch.zeros_like(x_t)
        return mean + math.sqrt(var) * noise


def timestep_embedding(t: torch.Tensor, dim: int, max_period: float = 10000.0) -> torch.Tensor:
    """Sinusoidal embedding of integer timesteps, shape (B, dim)."""
    half = dim // 2
    freqs = torch.exp(
        -math.log(max_period) * torch.arange(half, dtype=torch.float64) / half
    )
    args = t.double()[:, None] * freqs[None, :]
    emb = torch.cat([torch.cos(args), torch.sin(args)], dim=-1)
    if dim % 2:
        emb = torch.cat([emb, torch.zeros_like(emb[:, :1])], dim=-1)
    return emb.float()


class _ResBlock(nn.Module):
    def __init__(self, width: int):
        super().__init__()
        self.norm = nn.LayerNorm(width)
        self.fc1 = nn.Linear(width, width)
        self.fc2 = nn.Linear(width, width)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = self.fc2(torch.nn.functional.silu(self.fc1(self.norm(x))))
        return x + h


class DiffusionHead(nn.Module):
    """Noise predictor for one token channel width, conditioned on z and t."""

    def __init__(
        self,
        channels: int,
        z_width: int,
        width: int = 256,
        depth: int = 3,
        schedule: DiffusionSchedule | None = None,
    ):
        super().__init__()
        self.channels = channels
        self.schedule = schedule if schedule is not None else DiffusionSchedule(50)
        self.in_proj = nn.Linear(channels, width)
        self.z_proj = nn.Linear(z_width, width)
        self.t_proj = nn.Linear(width, width)
        self.blocks = nn.ModuleList(_ResBlock(width) for _ in range(depth))
        self.out_norm = nn.LayerNorm(width)
        self.out_proj = nn.Linear(width, channels)

    def forward(self, x_t: torch.Tensor, z: torch.Tensor, t: torch.Tensor) -> torch.Tensor:
        h = (
            self.in_proj(x_t)
            + self.z_proj(z)
            + self.t_proj(timestep_embedding(t, self.in_proj.out_features))
        )
        for block in self.blocks:
            h = block(h)
        return self.out_proj(self.out_norm(h))

    def sample(
        self,
        z: torch.Tensor,
        generator: torch.Generator,
        z_null: torch.Tensor | None = None,
        cfg_scale: float = 1.0,
    ) -> torch.Tensor:
        """Run the full reverse chain for a batch of tokens.

        cfg_scale blends conditional and null predictions; the 0 and 1
        endpoints skip the unused branch entirely so they are bit-exact
        matches of single-branch sampling.
        """
        sched = self.schedule
        n = z.shape[0]
        x = torch.randn(n, self.channels, generator=generator)
        blend = z_null is not None and cfg_scale not in (0.0, 1.0)
        use_null_only = z_null is not None and cfg_scale == 0.0
        with torch.no_grad():
            for t in range(sched.num_steps, 0, -1):
                tt = torch.full((n,), t, dtype=torch.long)
                if use_null_only:
                    eps = self.forward(x, z_null, tt)
                elif blend:
                    eps_c = self.forward(x, z, tt)
                    eps_n = self.forward(x, z_null, tt)
                    eps = eps_n + cfg_scale * (eps_c - eps_n)
                else:
                    eps = self.forward(x, z, tt)
                noise = (
                    torch.randn(n, self.channels, generator=generator) if t > 1 else None
                )
                x = sched.reverse_step(x, eps, t, noise)
        return x
