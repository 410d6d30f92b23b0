import json

import pytest

from strandforge import fileio
from strandforge.cli import main
from strandforge.sketchlab import StyleParams, synthesize_hairstyle

from test_pipeline import micro_config


def write_cfg(tmp_path, name, doc):
    path = tmp_path / name
    with open(path, "w") as fh:
        json.dump(doc, fh)
    return str(path)


@pytest.fixture(scope="module")
def dataset_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("data")
    doc = {
        "output_dir": str(d / "corpus"),
        "dataset": {
            "num_styles": 2,
            "augmentations": ["cut"],
            "include_base": True,
            "strands_per_style": 120,
            "points_per_strand": 16,
            "map_resolution": 16,
            "num_scales": 2,
            "latent_dim": 4,
            "sketch_size": 32,
            "seed": 3,
        },
    }
    cfg = d / "gen.json"
    with open(cfg, "w") as fh:
        json.dump(doc, fh)
    assert main(["gen-data", str(cfg)]) == 0
    return d / "corpus"


@pytest.fixture(scope="module")
def checkpoint_dir(tmp_path_factory, dataset_dir):
    d = tmp_path_factory.mktemp("ckpt")
    doc = {
        "dataset_dir": str(dataset_dir),
        "pipeline": micro_config().to_dict(),
        "steps": 6,
        "min_strands": 50,
        "output_dir": str(d / "model"),
        "metrics_jsonl": str(d / "metrics.jsonl"),
        "log_every": 2,
    }
    cfg = d / "train.json"
    with open(cfg, "w") as fh:
        json.dump(doc, fh)
    assert main(["train-generator", str(cfg)]) == 0
    return d / "model"


class TestGenData:
    def test_manifest_written(self, dataset_dir):
        assert (dataset_dir / "manifest.json").exists()
        with open(dataset_dir / "manifest.json") as fh:
            manifest = json.load(fh)
        assert len(manifest["samples"]) == 4


class TestTrainCodec:
    def test_trains_and_saves(self, tmp_path, dataset_dir):
        out = tmp_path / "codec.ckpt"
        cfg = write_cfg(
            tmp_path,
            "codec.json",
            {
                "dataset_dir": str(dataset_dir),
                "codec": {"mode": "linear", "latent_dim": 4, "points_per_strand": 16},
                "output": str(out),
            },
        )
        assert main(["train-codec", cfg]) == 0
        assert out.exists() and out.with_suffix(".ckpt.json").exists()


class TestTrainGenerate:
    def test_metrics_stream_written(self, checkpoint_dir):
        metrics = checkpoint_dir.parent / "metrics.jsonl"
        lines = [json.loads(x) for x in metrics.read_text().splitlines()]
        assert all({"step", "loss", "scale", "lr"} <= set(rec) for rec in lines)

    def test_generate_writes_per_scale_strd(self, tmp_path, checkpoint_dir, dataset_dir):
        sketch = next(dataset_dir.glob("*.k2.png"))
        cfg = write_cfg(
            tmp_path,
            "gen.json",
            {
                "checkpoint_dir": str(checkpoint_dir),
                "sketch_png": str(sketch),
                "seed": 4,
                "output_dir": str(tmp_path / "out"),
            },
        )
        assert main(["generate", cfg]) == 0
        for k in (1, 2):
            ss = fileio.load_strd(tmp_path / "out" / f"gen_k{k}.strd")
            assert ss.num_strands >= 1

    def test_generate_deterministic_across_runs(self, tmp_path, checkpoint_dir):
        for sub in ("a", "b"):
            cfg = write_cfg(
                tmp_path,
                f"gen_{sub}.json",
                {
                    "checkpoint_dir": str(checkpoint_dir),
                    "seed": 11,
                    "output_dir": str(tmp_path / sub),
                },
            )
            assert main(["generate", cfg]) == 0
        a = (tmp_path / "a" / "gen_k2.strd").read_bytes()
        b = (tmp_path / "b" / "gen_k2.strd").read_bytes()
        assert a == b


class TestRenderSketch:
    def test_direct_render(self, tmp_path):
        ss = synthesize_hairstyle(StyleParams(length=0.4, seed=5), n=120, num_points=16)
        strd = tmp_path / "in.strd"
        fileio.save_strd(ss, strd)
        out = tmp_path / "sketch.png"
        cfg = write_cfg(
            tmp_path,
            "render.json",
            {"strd": str(strd), "output": str(out), "size": 32},
        )
        assert main(["render-sketch", cfg]) == 0
        assert out.exists()

    def test_density_render_with_adhoc_codec(self, tmp_path):
        ss = synthesize_hairstyle(StyleParams(length=0.4, seed=5), n=150, num_points=16)
        strd = tmp_path / "in.strd"
        fileio.save_strd(ss, strd)
        out = tmp_path / "sketch_k1.png"
        cfg = write_cfg(
            tmp_path,
            "render2.json",
            {
                "strd": str(strd),
                "output": str(out),
                "size": 32,
                "density_level": 1,
                "num_scales": 2,
                "map_resolution": 16,
                "latent_dim": 4,
            },
        )
        assert main(["render-sketch", cfg]) == 0
        assert out.exists()


class TestEvaluate:
    def test_report_written(self, tmp_path, dataset_dir, checkpoint_dir):
        cfg = write_cfg(
            tmp_path,
            "eval.json",
            {
                "dataset_dir": str(dataset_dir),
                "checkpoint_dir": str(checkpoint_dir),
                "unconditional_samples": 2,
                "conditional_samples": 2,
                "eval_points": 256,
                "output_dir": str(tmp_path / "report"),
                "seed": 0,
            },
        )
        assert main(["evaluate", cfg]) == 0
        with open(tmp_path / "report" / "report.json") as fh:
            report = json.load(fh)
        for key in ("mmd_cd", "cov_cd", "one_nna", "pc_iou", "cd", "hd"):
            assert key in report
        assert (tmp_path / "report" / "report.md").exists()


class TestConfigPlumbing:
    def test_env_var_override(self, tmp_path, dataset_dir, monkeypatch):
        cfg = write_cfg(
            tmp_path,
            "envcfg.json",
            {
                "dataset_dir": str(dataset_dir),
                "codec": {"mode": "linear", "latent_dim": 2, "points_per_strand": 16},
                "output": str(tmp_path / "env_codec.ckpt"),
            },
        )
        monkeypatch.setenv("STRANDFORGE_CONFIG", cfg)
        assert main(["train-codec"]) == 0
        assert (tmp_path / "env_codec.ckpt").exists()

    def test_missing_config_errors(self, monkeypatch):
        monkeypatch.delenv("STRANDFORGE_CONFIG", raising=False)
        with pytest.raises(ValueError, match="STRANDFORGE_CONFIG"):
            main(["generate"])
