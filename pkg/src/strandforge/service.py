"""Generation service: job queue with progressive per-scale results.

One worker thread runs generations against the immutable pipeline; the
job table is guarded by a lock and reads return snapshots, so health
and status endpoints stay responsive while a generation runs.  Scales
appear in results strictly in order and never change once published.
"""

from __future__ import annotations

import base64
import io
import queue
import threading
import uuid
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from fastapi import FastAPI
from fastapi.responses import JSONResponse
from PIL import Image

from .fileio import strd_bytes
from .pipeline import HairPipeline
from .sketchlab import SketchImage

MAX_PREVIEW_STRANDS = 200
DEFAULT_QUEUE_DEPTH = 8


class BadSketchError(ValueError):
    pass


@dataclass
class GenJob:
    id: str
    request: dict
    status: str = "queued"
    results: list[dict] = field(default_factory=list)
    error: str | None = None
    scale_seconds: list[float] = field(default_factory=list)

    def snapshot(self) -> dict:
        return {
            "id": self.id,
            "status": self.status,
            "request": {k: v for k, v in self.request.items() if k != "sketch_pixels"},
            "results": list(self.results),
            "error": self.error,
            "timings": list(self.scale_seconds),
        }


def decode_sketch_b64(data: str, expected_size: int) -> np.ndarray:
    """Decode a base64 PNG into square grayscale pixels at service resolution."""
    try:
        raw = base64.b64decode(data, validate=True)
        img = Image.open(io.BytesIO(raw))
        img.load()
    except Exception as exc:
        raise BadSketchError(f"undecodable sketch image: {exc}") from exc
    if img.size[0] != img.size[1]:
        raise BadSketchError(f"sketch must be square, got {img.size}")
    if img.mode not in ("L", "1", "I;16", "P", "LA"):
        raise BadSketchError(f"sketch must be grayscale, got mode {img.mode}")
    img = img.convert("L")
    if img.size[0] != expected_size:
        img = img.resize((expected_size, expected_size), Image.NEAREST)
    return np.asarray(img, dtype=np.uint8)


def _preview_polylines(strand_set) -> list:
    arr = strand_set.as_array()
    step = max(1, arr.shape[0] // MAX_PREVIEW_STRANDS)
    return [np.round(s, 5).tolist() for s in arr[::step]]


class GenerationService:
    """Job table plus worker pool; one job is always handled by a single
    worker, so per-job scale ordering holds; extra workers (the model is
    immutable at inference) only add cross-job concurrency."""

    def __init__(
        self,
        pipeline: HairPipeline,
        queue_depth: int = DEFAULT_QUEUE_DEPTH,
        workers: int = 1,
    ):
        self.pipeline = pipeline
        self.jobs: dict[str, GenJob] = {}
        self.lock = threading.Lock()
        self.queue: queue.Queue[str | None] = queue.Queue(maxsize=queue_depth)
        self._stop = False
        self.workers = [
            threading.Thread(target=self._worker_loop, daemon=True)
            for _ in range(max(1, workers))
        ]
        for w in self.workers:
            w.start()

    # -- worker ---------------------------------------------------------------

    def _worker_loop(self):
        while not self._stop:
            job_id = self.queue.get()
            if job_id is None or self._stop:
                return
            self._run_job(job_id)

    def shutdown(self):
        self._stop = True
        for _ in self.workers:
            try:
                self.queue.put_nowait(None)  # wake idle workers
            except queue.Full:
                break
        for w in self.workers:
            w.join(timeout=30)

    def _run_job(self, job_id: str):
        with self.lock:
            job = self.jobs[job_id]
            req = dict(job.request)
            job.status = "running_scale_1"
        sketch = req.get("sketch_pixels")

        def on_scale(k: int, strand_set, grid):
            entry = {
                "scale": k,
                "strd_base64": base64.b64encode(strd_bytes(strand_set)).decode("ascii"),
                "preview": _preview_polylines(strand_set),
                "num_strands": strand_set.num_strands,
            }
            with self.lock:
                job.results.append(entry)
                total = req["scales_requested"]
                job.status = f"running_scale_{k + 1}" if k < total else "done"

        try:
            result = self.pipeline.generate(
                sketch=SketchImage(sketch, 1) if sketch is not None else None,
                seed=req["seed"],
                cfg_scale=req.get("cfg_scale"),
                infer_iters=req.get("steps"),
                upto_k=req["scales_requested"],
                on_scale=on_scale,
            )
            with self.lock:
                job.scale_seconds = result.scale_seconds
                job.status = "done"
        except Exception as exc:  # pragma: no cover - defensive path
            with self.lock:
                job.status = "failed"
                job.error = str(exc)

    # -- API ---------------------------------------------------------------------

    def submit(self, request: dict) -> str:
        job_id = uuid.uuid4().hex
        job = GenJob(id=job_id, request=request)
        with self.lock:
            self.jobs[job_id] = job
        try:
            self.queue.put_nowait(job_id)
        except queue.Full:
            with self.lock:
                del self.jobs[job_id]
            raise
        return job_id

    def snapshot(self, job_id: str) -> dict | None:
        with self.lock:
            job = self.jobs.get(job_id)
            return job.snapshot() if job else None


def create_app(
    pipeline: HairPipeline,
    queue_depth: int = DEFAULT_QUEUE_DEPTH,
    checkpoint_name: str = "default",
    workers: int = 1,
) -> FastAPI:
    from contextlib import asynccontextmanager

    service = GenerationService(pipeline, queue_depth=queue_depth, workers=workers)

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        yield
        service.shutdown()

    app = FastAPI(title="strandforge", version="0.1.0", lifespan=lifespan)
    app.state.service = service

    @app.get("/v1/healthz")
    def healthz():
        loaded = pipeline.strand_codec.is_trained
        if not loaded:
            return JSONResponse({"status": "no_model"}, status_code=503)
        return {"status": "ok"}

    @app.get("/v1/models")
    def models():
        return {
            "models": [
                {
                    "name": checkpoint_name,
                    "config_hash": pipeline.checkpoint_hash(),
                    "num_scales": pipeline.config.num_scales,
                    "sketch_size": pipeline.config.sketch_size,
                }
            ]
        }

    @app.post("/v1/jobs", status_code=202)
    def submit_job(body: dict[str, Any]):
        k_max = pipeline.config.num_scales
        try:
            seed = int(body.get("seed", 0))
            cfg_scale = body.get("cfg_scale")
            cfg_scale = None if cfg_scale is None else float(cfg_scale)
            steps = body.get("steps")
            steps = None if steps is None else int(steps)
            scales = int(body.get("scales_requested", k_max))
            if not 1 <= scales <= k_max or (steps is not None and steps < 1):
                raise ValueError("out of range")
        except (TypeError, ValueError):
            return JSONResponse({"error": "bad_params"}, status_code=400)

        sketch_pixels = None
        if body.get("sketch") is not None:
            try:
                sketch_pixels = decode_sketch_b64(
                    body["sketch"], pipeline.config.sketch_size
                )
            except BadSketchError as exc:
                return JSONResponse(
                    {"error": "bad_sketch", "detail": str(exc)}, status_code=400
                )
        request = {
            "seed": seed,
            "cfg_scale": cfg_scale,
            "steps": steps,
            "scales_requested": scales,
            "has_sketch": sketch_pixels is not None,
            "sketch_pixels": sketch_pixels,
        }
        try:
            job_id = service.submit(request)
        except queue.Full:
            return JSONResponse({"error": "queue_full"}, status_code=503)
        return {"id": job_id}

    @app.get("/v1/jobs/{job_id}")
    def job_state(job_id: str):
        snap = service.snapshot(job_id)
        if snap is None:
            return JSONResponse({"error": "unknown_job"}, status_code=404)
        return snap

    return app
