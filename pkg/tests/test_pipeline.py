import numpy as np
import pytest
import torch

from strandforge.config import PipelineConfig, desk_config, full_scale_config
from strandforge.metrics import pc_iou
from strandforge.pipeline import HairPipeline
from strandforge.sketchlab import StyleParams, synthesize_hairstyle


def micro_config(**overrides):
    base = dict(
        points_per_strand=16,
        latent_dim=4,
        map_resolution=16,
        num_scales=2,
        spatial_factors=(2, 2),
        latent_channels=(16, 16),
        sketch_size=32,
        cond_patch_size=8,
        cond_layers=3,
        cond_width=32,
        cond_heads=2,
        gen_width=32,
        gen_heads=2,
        diffusion_T=10,
        infer_iters=4,
        head_width=64,
        head_depth=1,
        diffusion_batch_mul=1,
        seed=0,
    )
    base.update(overrides)
    return PipelineConfig(**base)


@pytest.fixture(scope="module")
def corpus():
    styles = [
        StyleParams(length=0.3, seed=31),
        StyleParams(length=0.7, curl_amplitude=0.8, seed=32),
    ]
    return [synthesize_hairstyle(p, n=150, num_points=16) for p in styles]


@pytest.fixture(scope="module")
def fitted(corpus):
    pipe = HairPipeline(micro_config())
    pipe.fit_codecs(corpus)
    return pipe


class TestConfig:
    def test_desk_token_sides(self):
        cfg = desk_config()
        assert [cfg.token_side(k) for k in (1, 2, 3)] == [4, 8, 16]

    def test_full_scale_token_lengths(self):
        cfg = full_scale_config()
        # 32->64->128 maps with 1/4, 1/16, 1/16 compression
        assert [cfg.scale_resolution(k) for k in (1, 2, 3)] == [32, 64, 128]
        assert [cfg.token_side(k) ** 2 for k in (1, 2, 3)] == [256, 256, 1024]

    def test_hash_stable(self):
        assert desk_config().config_hash() == desk_config().config_hash()
        assert desk_config().config_hash() != full_scale_config().config_hash()

    def test_round_trip_dict(self):
        cfg = desk_config(latent_dim=4)
        assert PipelineConfig.from_dict(cfg.to_dict()) == cfg


class TestEncodeDecode:
    def test_token_shapes(self, fitted, corpus):
        tokens = fitted.encode_strands(corpus[0])
        assert [t.shape for t in tokens] == [(4, 4, 16), (8, 8, 16)]

    def test_round_trip_iou(self, fitted, corpus):
        # micro config is deliberately low fidelity; this is a sanity floor
        tokens = fitted.encode_strands(corpus[0])
        dec = fitted.decode_latents(tokens)
        iou = pc_iou(corpus[0].all_points(), dec.all_points())
        assert iou > 0.3

    def test_intermediate_scale_decodable(self, fitted, corpus):
        tokens = fitted.encode_strands(corpus[0])
        coarse = fitted.decode_latents(tokens[:1], upto_k=1)
        assert coarse.num_strands == 8 * 8
        coarse.validate_roots()


class TestGeneration:
    def test_deterministic(self, fitted):
        a = fitted.generate(None, seed=4)
        b = fitted.generate(None, seed=4)
        for x, y in zip(a.latents, b.latents):
            assert np.array_equal(x, y)

    def test_all_scales_valid_strandsets(self, fitted):
        # every intermediate scale decodes with finite points and on-scalp
        # roots across many seeds
        for seed in range(100):
            res = fitted.generate(None, seed=seed, infer_iters=2)
            assert len(res.strand_sets) == 2
            for ss in res.strand_sets:
                arr = ss.as_array()
                assert np.all(np.isfinite(arr))
                ss.validate_roots()

    def test_conditional_generation_runs(self, fitted, corpus):
        samples = fitted.make_training_samples([corpus[0]])
        res = fitted.generate(samples[0].sketches[-1], seed=1)
        assert res.strand_sets[-1].num_strands == 16 * 16

    def test_upto_k(self, fitted):
        res = fitted.generate(None, seed=2, upto_k=1)
        assert len(res.strand_sets) == 1


class TestTraining:
    def test_short_joint_training_runs(self, fitted, corpus):
        samples = fitted.make_training_samples(corpus)
        losses = fitted.clone_for_variant().train_generator(samples, steps=8)
        assert len(losses) == 8
        assert all(np.isfinite(losses))

    def test_generator_only_training(self, fitted, corpus):
        samples = fitted.make_training_samples(corpus)
        var = fitted.clone_for_variant(fusion_mode="global_only", seed=3)
        theta_before = var.scale_tokens.tokens.detach().clone()
        losses = var.train_generator(samples, steps=8, train_conditioner=False)
        assert all(np.isfinite(losses))
        assert torch.equal(var.scale_tokens.tokens.detach(), theta_before)


class TestPersistence:
    def test_save_load_round_trip(self, fitted, corpus, tmp_path):
        samples = fitted.make_training_samples([corpus[0]])
        pipe = fitted.clone_for_variant()
        pipe.train_generator(samples, steps=4)
        pipe.save(tmp_path / "ckpt")
        back = HairPipeline.load(tmp_path / "ckpt")
        a = pipe.generate(samples[0].sketches[-1], seed=9)
        b = back.generate(samples[0].sketches[-1], seed=9)
        for x, y in zip(a.latents, b.latents):
            np.testing.assert_allclose(x, y, atol=1e-6)

    def test_hash_exposed(self, fitted):
        assert len(fitted.checkpoint_hash()) == 16
