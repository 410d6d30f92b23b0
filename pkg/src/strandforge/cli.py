"""Command-line entry points; every verb reads a single JSON config file."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import PipelineConfig, desk_config, load_json_config


def _pipeline_from_cfg(doc: dict) -> PipelineConfig:
    return PipelineConfig.from_dict({**desk_config().to_dict(), **doc.get("pipeline", {})})


def cmd_gen_data(doc: dict) -> int:
    from .sketchlab import DatasetConfig, build_dataset

    out_dir = Path(doc["output_dir"])
    ds = doc.get("dataset", {})
    if "augmentations" in ds:
        ds["augmentations"] = tuple(ds["augmentations"])
    manifest = build_dataset(out_dir, DatasetConfig(**ds))
    print(f"wrote {len(manifest['samples'])} samples to {out_dir}")
    return 0


def cmd_train_codec(doc: dict) -> int:
    from .codec import StrandCodecConfig, reconstruction_rmse, train_strand_codec
    from .sketchlab import load_dataset

    samples = load_dataset(doc["dataset_dir"])
    strand_sets = [ss for ss, _ in samples]
    codec_cfg = StrandCodecConfig(**doc.get("codec", {}))
    codec = train_strand_codec(strand_sets, codec_cfg)
    out = Path(doc.get("output", "strand_codec.ckpt"))
    codec.save(out)
    rmse = reconstruction_rmse(codec, strand_sets[0])
    print(f"trained {codec_cfg.mode} codec -> {out} losses={codec.losses} rmse={rmse:.5f}")
    return 0


def cmd_train_generator(doc: dict) -> int:
    from .pipeline import HairPipeline
    from .sketchlab import load_dataset

    pipe = HairPipeline(_pipeline_from_cfg(doc))
    samples_raw = load_dataset(doc["dataset_dir"], scalp=pipe.scalp)
    limit = doc.get("limit_samples")
    strand_sets = [ss for ss, _ in (samples_raw[:limit] if limit else samples_raw)]
    pipe.fit_codecs(strand_sets, min_strands=int(doc.get("min_strands", 100)))
    samples = pipe.make_training_samples(strand_sets)

    metrics_path = doc.get("metrics_jsonl")
    log_fh = open(metrics_path, "w") if metrics_path else None

    def log_cb(rec):
        line = json.dumps(rec)
        if log_fh:
            log_fh.write(line + "\n")
            log_fh.flush()
        print(line)

    losses = pipe.train_generator(
        samples,
        steps=int(doc.get("steps", 1000)),
        seed=doc.get("seed"),
        lr=doc.get("lr"),
        log_every=int(doc.get("log_every", 100)),
        log_cb=log_cb,
    )
    if log_fh:
        log_fh.close()
    out_dir = Path(doc["output_dir"])
    pipe.save(out_dir)
    print(f"trained {len(losses)} steps, final loss {losses[-1]:.4f} -> {out_dir}")
    return 0


def cmd_generate(doc: dict) -> int:
    from . import fileio
    from .pipeline import HairPipeline
    from .sketchlab import SketchImage

    pipe = HairPipeline.load(doc["checkpoint_dir"])
    sketch = None
    if doc.get("sketch_png"):
        sketch = SketchImage.load_png(doc["sketch_png"])
    result = pipe.generate(
        sketch,
        seed=int(doc.get("seed", 0)),
        cfg_scale=doc.get("cfg_scale"),
        infer_iters=doc.get("steps"),
    )
    out_dir = Path(doc.get("output_dir", "."))
    out_dir.mkdir(parents=True, exist_ok=True)
    for k, ss in enumerate(result.strand_sets, start=1):
        path = out_dir / f"gen_k{k}.strd"
        fileio.save_strd(ss, path)
        print(f"scale {k}: {ss.num_strands} strands -> {path}")
    return 0


def cmd_evaluate(doc: dict) -> int:
    from .metrics import evaluate_report

    report = evaluate_report(doc["dataset_dir"], doc["checkpoint_dir"], doc)
    print(json.dumps(report, indent=2, sort_keys=True))
    return 0


def cmd_render_sketch(doc: dict) -> int:
    from . import fileio
    from .codec import StrandCodecConfig, train_strand_codec
    from .hairmap import hairmap_to_strands, strands_to_hairmap
    from .pyramid import PyramidConfig, decompose, reconstruct
    from .sketchlab import compute_frame, rasterize_sketch

    ss = fileio.load_strd(doc["strd"])
    size = int(doc.get("size", 64))
    level = doc.get("density_level")
    if level is None:
        sketch = rasterize_sketch(ss, 1, size)
    else:
        level = int(level)
        num_scales = int(doc.get("num_scales", 3))
        map_w = int(doc.get("map_resolution", 32))
        if doc.get("checkpoint_dir"):
            from .pipeline import HairPipeline

            pipe = HairPipeline.load(doc["checkpoint_dir"])
            codec = pipe.strand_codec
            num_scales = pipe.config.num_scales
            map_w = pipe.config.map_resolution
        else:
            codec = train_strand_codec(
                [ss],
                StrandCodecConfig(
                    latent_dim=int(doc.get("latent_dim", 8)),
                    points_per_strand=ss.points_per_strand,
                ),
                min_strands=int(doc.get("min_strands", 10)),
            )
        pcfg = PyramidConfig(num_scales=num_scales, base_w=map_w // 2 ** (num_scales - 1))
        pyr = decompose(strands_to_hairmap(ss, codec, map_w), pcfg)
        guides = hairmap_to_strands(reconstruct(pyr, level), codec, ss.scalp)
        frame = compute_frame(ss.all_points(), size)
        sketch = rasterize_sketch(guides, level, size, frame=frame)
    out = Path(doc.get("output", "sketch.png"))
    sketch.save_png(out)
    print(f"wrote {out}")
    return 0


def cmd_serve(doc: dict) -> int:
    import uvicorn

    from .pipeline import HairPipeline
    from .service import DEFAULT_QUEUE_DEPTH, create_app

    pipe = HairPipeline.load(doc["checkpoint_dir"])
    app = create_app(
        pipe,
        queue_depth=int(doc.get("queue_depth", DEFAULT_QUEUE_DEPTH)),
        checkpoint_name=str(doc.get("model_name", Path(doc["checkpoint_dir"]).name)),
        workers=int(doc.get("workers", 1)),
    )
    uvicorn.run(app, host=doc.get("host", "127.0.0.1"), port=int(doc.get("port", 8000)))
    return 0


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train-codec": cmd_train_codec,
    "train-generator": cmd_train_generator,
    "generate": cmd_generate,
    "evaluate": cmd_evaluate,
    "render-sketch": cmd_render_sketch,
    "serve": cmd_serve,
}


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="strandforge")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, help=f"{name} (reads a JSON config file)")
        p.add_argument(
            "config",
            nargs="?",
            default=None,
            help="path to JSON config (or set STRANDFORGE_CONFIG)",
        )
    args = parser.parse_args(argv)
    doc = load_json_config(args.config)
    return COMMANDS[args.command](doc)


if __name__ == "__main__":
    sys.exit(main())
