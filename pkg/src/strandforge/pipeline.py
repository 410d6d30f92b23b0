"""End-to-end orchestration: codecs -> pyramid -> generator -> strands.

The pipeline owns the staged training (codecs first, then scale tokens
jointly with the generator) and the inference path from a sketch to
per-scale strand sets.  Conditioning follows the alternation rule:
training steps switch between adapted embeddings of a random-density
sketch and frozen-copy embeddings of the density-matched sketch, with
the alignment loss applied on the adapted branch.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .checkpoint import (
    load_checkpoint,
    save_checkpoint,
    state_dict_to_tensors,
    tensors_to_state_dict,
)
from .codec import (
    LatentCodec,
    LatentGrid,
    StrandCodec,
    StrandCodecConfig,
    train_latent_codec,
    train_strand_codec,
)
from .conditioner import (
    ScaleTokens,
    SketchEmbedding,
    SketchEncoder,
    SketchEncoderConfig,
    alignment_loss,
    encode_sketch,
    sketch_to_tensor,
)
from .config import PipelineConfig
from .genmodel import GeneratorConfig, NextScaleGenerator
from .hairmap import hairmap_to_strands, remove_outliers, strands_to_hairmap
from .pyramid import PyramidConfig, decompose, reconstruct_from_grids
from .scalp import ScalpModel
from .sketchlab import SketchImage, compute_frame, rasterize_sketch
from .strands import StrandSet


@dataclass
class TrainingSample:
    strand_set: StrandSet
    tokens: list[np.ndarray]  # per scale, (G, G, C)
    sketches: list[SketchImage]  # per scale


@dataclass
class GenerationResult:
    latents: list[np.ndarray]
    strand_sets: list[StrandSet]
    seed: int
    cfg_scale: float
    scale_seconds: list[float] = field(default_factory=list)


class HairPipeline:
    def __init__(self, config: PipelineConfig):
        self.config = config
        self.scalp = ScalpModel()
        self.pyramid_cfg = PyramidConfig(
            num_scales=config.num_scales, base_w=config.base_w
        )
        torch.manual_seed(config.seed)
        self.strand_codec = StrandCodec(
            StrandCodecConfig(
                mode="linear",
                latent_dim=config.latent_dim,
                points_per_strand=config.points_per_strand,
                seed=config.seed,
            )
        )
        self.latent_codecs = [
            LatentCodec(
                scale_k=k,
                grid_w=config.scale_resolution(k),
                latent_dim=config.latent_dim,
                spatial_factor=config.spatial_factors[k - 1],
                channels_out=config.latent_channels[k - 1],
            )
            for k in range(1, config.num_scales + 1)
        ]
        enc_cfg = SketchEncoderConfig(
            image_size=config.sketch_size,
            patch_size=config.cond_patch_size,
            layers=config.cond_layers,
            width=config.cond_width,
            heads=config.cond_heads,
            num_scales=config.num_scales,
            tokens_per_set=config.tokens_per_set,
        )
        self.encoder = SketchEncoder(enc_cfg)
        self.scale_tokens = ScaleTokens(enc_cfg)
        self.frozen_encoder = self.encoder.make_frozen_copy()
        self.generator = NextScaleGenerator(
            GeneratorConfig(
                num_scales=config.num_scales,
                token_sides=tuple(
                    config.token_side(k) for k in range(1, config.num_scales + 1)
                ),
                token_channels=config.latent_channels,
                width=config.gen_width,
                heads=config.gen_heads,
                layers_enc=config.layers_enc,
                layers_dec=config.layers_dec,
                cond_width=config.cond_width,
                num_patch_tokens=enc_cfg.num_patches,
                diffusion_T=config.diffusion_T,
                beta_start=config.beta_start,
                beta_end=config.beta_end,
                infer_iters=config.infer_iters,
                cfg_drop_prob=config.cfg_drop_prob,
                cfg_scale=config.cfg_scale,
                noise_inject_tmax=config.noise_inject_tmax,
                head_width=config.head_width,
                head_depth=config.head_depth,
                diffusion_batch_mul=config.diffusion_batch_mul,
                fusion_mode=config.fusion_mode,
                seed=config.seed,
            )
        )

    # -- encoding ------------------------------------------------------------

    def hairstyle_pyramid(self, ss: StrandSet):
        hm = strands_to_hairmap(ss, self.strand_codec, self.config.map_resolution)
        if self.config.clean_outliers:
            hm = remove_outliers(hm)
        return decompose(hm, self.pyramid_cfg)

    def encode_strands(self, ss: StrandSet) -> list[np.ndarray]:
        """Strand set -> per-scale token grids."""
        pyr = self.hairstyle_pyramid(ss)
        return [
            self.latent_codecs[k].encode(pyr.residuals[k]).tokens
            for k in range(self.config.num_scales)
        ]

    def decode_latents(
        self, token_grids: list[np.ndarray], upto_k: int | None = None
    ) -> StrandSet:
        """Token grids for scales 1..k -> strand set at scale k resolution."""
        k = len(token_grids) if upto_k is None else upto_k
        residuals = []
        validities = []
        for i in range(k):
            grid = self.latent_codecs[i].decode(
                LatentGrid(tokens=token_grids[i], scale_k=i + 1)
            )
            residuals.append(grid)
            w = self.config.scale_resolution(i + 1)
            validities.append(np.ones((w, w), dtype=bool))
        sub_cfg = PyramidConfig(num_scales=k, base_w=self.config.base_w)
        hm = reconstruct_from_grids(residuals, validities, sub_cfg)
        return hairmap_to_strands(hm, self.strand_codec, self.scalp, all_cells=True)

    # -- training -------------------------------------------------------------

    def fit_codecs(self, strand_sets: list[StrandSet], min_strands: int = 100) -> None:
        self.strand_codec = train_strand_codec(
            strand_sets, self.strand_codec.config, min_strands=min_strands
        )
        pyramids = [self.hairstyle_pyramid(ss) for ss in strand_sets]
        for k in range(self.config.num_scales):
            grids = [p.residuals[k] for p in pyramids]
            train_latent_codec(self.latent_codecs[k], grids)

    def make_training_samples(self, strand_sets: list[StrandSet]) -> list[TrainingSample]:
        samples = []
        for ss in strand_sets:
            pyr = self.hairstyle_pyramid(ss)
            tokens = [
                self.latent_codecs[k].encode(pyr.residuals[k]).tokens
                for k in range(self.config.num_scales)
            ]
            frame = compute_frame(ss.all_points(), self.config.sketch_size)
            sketches = []
            for k in range(1, self.config.num_scales + 1):
                level = reconstruct_from_grids(
                    [pyr.residuals[i] for i in range(k)],
                    [pyr.validities[i] for i in range(k)],
                    PyramidConfig(num_scales=k, base_w=self.config.base_w),
                )
                guides = hairmap_to_strands(level, self.strand_codec, self.scalp)
                sketches.append(
                    rasterize_sketch(guides, k, self.config.sketch_size, frame=frame)
                )
            samples.append(TrainingSample(strand_set=ss, tokens=tokens, sketches=sketches))
        return samples

    def _trainable_parameters(self):
        params = list(self.generator.parameters()) + [self.scale_tokens.tokens]
        for p in self.encoder.parameters():
            p.requires_grad_(False)
        for block in self.encoder.blocks:
            for p in block.inject_readout.parameters():
                p.requires_grad_(True)
                params.append(p)
        return params

    def train_generator(
        self,
        samples: list[TrainingSample],
        steps: int,
        seed: int | None = None,
        lr: float | None = None,
        train_conditioner: bool = True,
        log_every: int = 0,
        log_cb=None,
    ) -> list[float]:
        """Joint scale-token + generator training; returns per-step losses.

        ``train_conditioner=False`` freezes the sketch encoder and scale
        tokens and trains the generator against cached embeddings (used by
        the fusion ablations for a controlled comparison).
        """
        cfg = self.config
        seed = cfg.seed if seed is None else seed
        rng = np.random.default_rng(seed)
        gen_rng = torch.Generator().manual_seed(seed)
        if train_conditioner:
            params = self._trainable_parameters()
        else:
            params = list(self.generator.parameters())
        base_lr = cfg.lr if lr is None else lr
        opt = torch.optim.Adam(params, lr=base_lr)
        warmup = max(1, min(100, steps // 10))

        def lr_at(step: int) -> float:
            if step < warmup:
                return base_lr * (step + 1) / warmup
            frac = (step - warmup) / max(1, steps - warmup)
            return base_lr * (0.1 + 0.9 * 0.5 * (1.0 + np.cos(np.pi * frac)))

        k_count = cfg.num_scales
        sketch_tensors = [
            torch.stack([sketch_to_tensor(sk.pixels) for sk in s.sketches])
            for s in samples
        ]  # per sample: (K, S, S)
        with torch.no_grad():
            frozen_embs = [
                [
                    self.frozen_encoder(t[k].unsqueeze(0))
                    for k in range(k_count)
                ]
                for t in sketch_tensors
            ]

        token_batches = [
            torch.stack(
                [torch.from_numpy(np.array(s.tokens[k])).float() for s in samples]
            ).reshape(len(samples), -1, cfg.latent_channels[k])
            for k in range(k_count)
        ]
        prev_grids = [
            torch.stack([torch.from_numpy(np.array(s.tokens[k])).float() for s in samples])
            for k in range(k_count)
        ]

        adapted_cache = None
        if not train_conditioner:
            # Frozen conditioner: precompute adapted embeddings for every
            # (sample, sketch density, target scale) triple.
            with torch.no_grad():
                adapted_cache = [
                    [
                        [
                            self.encoder(
                                t[i].unsqueeze(0), k=k, scale_tokens=self.scale_tokens
                            )
                            for k in range(1, k_count + 1)
                        ]
                        for i in range(k_count)
                    ]
                    for t in sketch_tensors
                ]

        # The coarsest scale carries hairstyle identity: train it as often
        # as all finer scales combined.
        if k_count > 1:
            k_cycle = [x for j in range(2, k_count + 1) for x in (1, j)]
        else:
            k_cycle = [1]

        losses: list[float] = []
        for step in range(steps):
            for group in opt.param_groups:
                group["lr"] = lr_at(step)
            k = k_cycle[step % len(k_cycle)]
            use_adapted = (step // len(k_cycle)) % 2 == 0
            align = None
            if use_adapted:
                scale_pick = rng.integers(1, k_count + 1, size=len(samples))
                if train_conditioner:
                    imgs = torch.stack(
                        [sketch_tensors[b][scale_pick[b] - 1] for b in range(len(samples))]
                    )
                    patches, summary = self.encoder(
                        imgs, k=k, scale_tokens=self.scale_tokens
                    )
                    cond_embs = [
                        SketchEmbedding(patches[b], summary[b], k)
                        for b in range(len(samples))
                    ]
                    target = torch.cat(
                        [frozen_embs[b][k - 1][1] for b in range(len(samples))]
                    )
                    align = alignment_loss(summary, target)
                    if cfg.align_on == "all":
                        target_patches = torch.cat(
                            [frozen_embs[b][k - 1][0] for b in range(len(samples))]
                        )
                        align = align + alignment_loss(patches, target_patches)
                else:
                    cond_embs = [
                        SketchEmbedding(
                            adapted_cache[b][scale_pick[b] - 1][k - 1][0][0],
                            adapted_cache[b][scale_pick[b] - 1][k - 1][1][0],
                            k,
                        )
                        for b in range(len(samples))
                    ]
            else:
                cond_embs = [
                    SketchEmbedding(
                        frozen_embs[b][k - 1][0][0], frozen_embs[b][k - 1][1][0], k
                    )
                    for b in range(len(samples))
                ]
            prev = [prev_grids[i] for i in range(k - 1)]
            loss = self.generator.train_step(
                token_batches[k - 1], k, cond_embs, prev, rng, gen_rng
            )
            total = loss if align is None else loss + cfg.align_weight * align
            opt.zero_grad()
            total.backward()
            opt.step()
            losses.append(float(loss.detach()))
            if log_every and (step % log_every == 0 or step == steps - 1) and log_cb:
                log_cb({"step": step, "loss": losses[-1], "scale": k, "lr": opt.param_groups[0]["lr"]})
        return losses

    def clone_for_variant(
        self, fusion_mode: str | None = None, seed: int | None = None
    ) -> "HairPipeline":
        """New pipeline sharing trained codecs and conditioner weights but a
        freshly initialized generator (used for fusion/scale ablations)."""
        import copy as _copy
        from dataclasses import replace

        cfg = replace(
            self.config,
            fusion_mode=self.config.fusion_mode if fusion_mode is None else fusion_mode,
            seed=self.config.seed if seed is None else seed,
        )
        variant = HairPipeline(cfg)
        variant.strand_codec = self.strand_codec
        variant.latent_codecs = list(self.latent_codecs)
        variant.encoder = _copy.deepcopy(self.encoder)
        variant.scale_tokens = _copy.deepcopy(self.scale_tokens)
        variant.frozen_encoder = self.frozen_encoder
        return variant

    # -- inference --------------------------------------------------------------

    def encode_condition(self, sketch: SketchImage | np.ndarray) -> list[SketchEmbedding]:
        pixels = sketch.pixels if isinstance(sketch, SketchImage) else np.asarray(sketch)
        embs = []
        with torch.no_grad():
            for k in range(1, self.config.num_scales + 1):
                embs.append(
                    encode_sketch(self.encoder, pixels, k, self.scale_tokens).detached()
                )
        return embs

    def generate(
        self,
        sketch: SketchImage | np.ndarray | None,
        seed: int,
        cfg_scale: float | None = None,
        infer_iters: int | None = None,
        upto_k: int | None = None,
        on_scale=None,
    ) -> GenerationResult:
        """Sketch (or None for unconditional) -> per-scale strand sets.

        ``on_scale(k, strand_set, latents)`` streams each scale as soon as
        it is decoded.
        """
        cond = self.encode_condition(sketch) if sketch is not None else None
        latents: list[np.ndarray] = []
        strand_sets: list[StrandSet] = []
        timings: list[float] = []

        def per_scale(k: int, grid: np.ndarray):
            start = time.monotonic()
            latents.append(grid)
            strand_sets.append(self.decode_latents(latents, upto_k=k))
            timings.append(time.monotonic() - start)
            if on_scale is not None:
                on_scale(k, strand_sets[-1], grid)

        self.generator.generate_full(
            cond,
            seed,
            cfg_scale=cfg_scale,
            infer_iters=infer_iters,
            upto_k=upto_k,
            on_scale=per_scale,
        )
        used_scale = self.generator.cfg.cfg_scale if cfg_scale is None else cfg_scale
        return GenerationResult(
            latents=latents,
            strand_sets=strand_sets,
            seed=seed,
            cfg_scale=used_scale,
            scale_seconds=timings,
        )

    # -- persistence ---------------------------------------------------------------

    def save(self, out_dir) -> None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / "pipeline.json", "w") as fh:
            json.dump(
                {"config": self.config.to_dict(), "hash": self.config.config_hash()},
                fh,
                indent=2,
                sort_keys=True,
            )
        self.strand_codec.save(out_dir / "strand_codec.ckpt")
        for k, codec in enumerate(self.latent_codecs, start=1):
            codec.save(out_dir / f"latent_k{k}.ckpt")
        save_checkpoint(
            out_dir / "generator.ckpt",
            state_dict_to_tensors(self.generator.state_dict()),
            {"kind": "generator", "seed": self.config.seed},
        )
        cond_tensors = {
            f"encoder.{n}": t
            for n, t in state_dict_to_tensors(self.encoder.state_dict()).items()
        }
        cond_tensors.update(
            {
                f"frozen.{n}": t
                for n, t in state_dict_to_tensors(self.frozen_encoder.state_dict()).items()
            }
        )
        cond_tensors["theta"] = self.scale_tokens.tokens.detach().numpy()
        save_checkpoint(out_dir / "conditioner.ckpt", cond_tensors, {"kind": "conditioner"})

    @classmethod
    def load(cls, in_dir) -> "HairPipeline":
        in_dir = Path(in_dir)
        with open(in_dir / "pipeline.json") as fh:
            doc = json.load(fh)
        pipe = cls(PipelineConfig.from_dict(doc["config"]))
        pipe.strand_codec = StrandCodec.load(in_dir / "strand_codec.ckpt")
        pipe.latent_codecs = [
            LatentCodec.load(in_dir / f"latent_k{k}.ckpt")
            for k in range(1, pipe.config.num_scales + 1)
        ]
        gen_tensors, _ = load_checkpoint(in_dir / "generator.ckpt")
        pipe.generator.load_state_dict(tensors_to_state_dict(gen_tensors))
        cond_tensors, _ = load_checkpoint(in_dir / "conditioner.ckpt")
        enc_sd = {
            n[len("encoder."):]: t
            for n, t in cond_tensors.items()
            if n.startswith("encoder.")
        }
        frozen_sd = {
            n[len("frozen."):]: t for n, t in cond_tensors.items() if n.startswith("frozen.")
        }
        pipe.encoder.load_state_dict(tensors_to_state_dict(enc_sd))
        pipe.frozen_encoder.load_state_dict(tensors_to_state_dict(frozen_sd))
        with torch.no_grad():
            pipe.scale_tokens.tokens.copy_(torch.from_numpy(cond_tensors["theta"]))
        # module modes stay at their construction defaults: eval() would
        # switch attention onto a different (fast-path) kernel and break
        # bit-level reproducibility against a freshly trained pipeline
        return pipe

    def checkpoint_hash(self) -> str:
        return self.config.config_hash()
