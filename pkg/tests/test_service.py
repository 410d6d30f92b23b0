import base64
import hashlib
import io
import threading
import time

import numpy as np
import pytest
from fastapi.testclient import TestClient
from PIL import Image

from strandforge.pipeline import HairPipeline
from strandforge.service import create_app
from strandforge.sketchlab import StyleParams, rasterize_sketch, synthesize_hairstyle

from test_pipeline import micro_config


def png_b64(pixels: np.ndarray) -> str:
    buf = io.BytesIO()
    Image.fromarray(pixels.astype(np.uint8), mode="L").save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


@pytest.fixture(scope="module")
def pipeline():
    ss = synthesize_hairstyle(StyleParams(length=0.4, seed=41), n=150, num_points=16)
    pipe = HairPipeline(micro_config())
    pipe.fit_codecs([ss])
    return pipe


@pytest.fixture(scope="module")
def sketch_b64(pipeline):
    ss = synthesize_hairstyle(StyleParams(length=0.4, seed=41), n=150, num_points=16)
    img = rasterize_sketch(ss, 1, pipeline.config.sketch_size)
    return png_b64(np.asarray(img.pixels))


@pytest.fixture()
def client(pipeline):
    app = create_app(pipeline, queue_depth=4, checkpoint_name="micro")
    with TestClient(app) as c:
        yield c


def wait_done(client, job_id, timeout=60.0):
    deadline = time.time() + timeout
    while time.time() < deadline:
        snap = client.get(f"/v1/jobs/{job_id}").json()
        if snap["status"] in ("done", "failed"):
            return snap
        time.sleep(0.05)
    raise TimeoutError(f"job {job_id} did not finish")


class TestEndpoints:
    def test_healthz(self, client):
        r = client.get("/v1/healthz")
        assert r.status_code == 200
        assert r.json() == {"status": "ok"}

    def test_models(self, client, pipeline):
        r = client.get("/v1/models")
        assert r.status_code == 200
        models = r.json()["models"]
        assert models[0]["name"] == "micro"
        assert models[0]["config_hash"] == pipeline.checkpoint_hash()

    def test_submit_and_progressive_results(self, client, sketch_b64, pipeline):
        r = client.post("/v1/jobs", json={"sketch": sketch_b64, "seed": 5})
        assert r.status_code == 202
        job_id = r.json()["id"]
        snap = wait_done(client, job_id)
        assert snap["status"] == "done"
        k = pipeline.config.num_scales
        assert [res["scale"] for res in snap["results"]] == list(range(1, k + 1))
        for res in snap["results"]:
            assert base64.b64decode(res["strd_base64"])[:4] == b"STRD"
            assert res["num_strands"] >= 1
            assert isinstance(res["preview"], list)

    def test_unknown_job_404(self, client):
        r = client.get("/v1/jobs/deadbeef")
        assert r.status_code == 404
        assert r.json()["error"] == "unknown_job"

    def test_corrupt_base64_rejected(self, client):
        r = client.post("/v1/jobs", json={"sketch": "!!!notbase64!!!", "seed": 1})
        assert r.status_code == 400
        assert r.json()["error"] == "bad_sketch"

    def test_non_square_image_rejected(self, client):
        img = np.full((16, 32), 255, np.uint8)
        buf = io.BytesIO()
        Image.fromarray(img, mode="L").save(buf, format="PNG")
        b64 = base64.b64encode(buf.getvalue()).decode()
        r = client.post("/v1/jobs", json={"sketch": b64, "seed": 1})
        assert r.status_code == 400
        assert r.json()["error"] == "bad_sketch"

    def test_rgb_image_rejected(self, client):
        rgb = np.zeros((32, 32, 3), np.uint8)
        buf = io.BytesIO()
        Image.fromarray(rgb, mode="RGB").save(buf, format="PNG")
        b64 = base64.b64encode(buf.getvalue()).decode()
        r = client.post("/v1/jobs", json={"sketch": b64, "seed": 1})
        assert r.status_code == 400
        assert r.json()["error"] == "bad_sketch"

    def test_bad_params_rejected(self, client, sketch_b64):
        r = client.post(
            "/v1/jobs", json={"sketch": sketch_b64, "seed": 1, "scales_requested": 99}
        )
        assert r.status_code == 400
        assert r.json()["error"] == "bad_params"

    def test_unconditional_job(self, client):
        r = client.post("/v1/jobs", json={"seed": 2, "scales_requested": 1})
        assert r.status_code == 202
        snap = wait_done(client, r.json()["id"])
        assert snap["status"] == "done"
        assert len(snap["results"]) == 1


class TestDeterminism:
    def test_same_seed_same_hashes(self, client, sketch_b64):
        ids = []
        for _ in range(2):
            r = client.post("/v1/jobs", json={"sketch": sketch_b64, "seed": 7})
            ids.append(r.json()["id"])
        snaps = [wait_done(client, j) for j in ids]
        hashes = [
            [hashlib.sha256(res["strd_base64"].encode()).hexdigest() for res in s["results"]]
            for s in snaps
        ]
        assert hashes[0] == hashes[1]

    def test_different_seed_differs(self, client, sketch_b64):
        outs = []
        for seed in (1, 2):
            r = client.post("/v1/jobs", json={"sketch": sketch_b64, "seed": seed})
            snap = wait_done(client, r.json()["id"])
            outs.append(snap["results"][-1]["strd_base64"])
        assert outs[0] != outs[1]


class TestProgressiveInvariant:
    def test_prefix_order_and_immutability_under_concurrent_polls(
        self, client, sketch_b64
    ):
        r = client.post("/v1/jobs", json={"sketch": sketch_b64, "seed": 9})
        job_id = r.json()["id"]
        seen = []
        errors = []
        stop = threading.Event()

        def poller():
            while not stop.is_set():
                snap = client.get(f"/v1/jobs/{job_id}").json()
                scales = [res["scale"] for res in snap["results"]]
                if scales != list(range(1, len(scales) + 1)):
                    errors.append(f"non-prefix scales {scales}")
                if snap["status"].startswith("running_scale_"):
                    k = int(snap["status"].rsplit("_", 1)[1])
                    if len(scales) < k - 1:
                        errors.append(f"status {snap['status']} but results {scales}")
                seen.append(
                    {res["scale"]: hashlib.sha256(res["strd_base64"].encode()).hexdigest()
                     for res in snap["results"]}
                )
                time.sleep(0.01)

        threads = [threading.Thread(target=poller) for _ in range(3)]
        for t in threads:
            t.start()
        wait_done(client, job_id)
        stop.set()
        for t in threads:
            t.join()
        assert not errors
        # once a scale appeared its payload never changed
        final = {}
        for snap in seen:
            for scale, digest in snap.items():
                if scale in final:
                    assert final[scale] == digest
                final[scale] = digest

    def test_healthz_responsive_while_generating(self, client, sketch_b64):
        r = client.post("/v1/jobs", json={"sketch": sketch_b64, "seed": 11})
        t0 = time.time()
        h = client.get("/v1/healthz")
        dt = time.time() - t0
        assert h.status_code == 200
        assert dt < 1.0
        wait_done(client, r.json()["id"])


class TestQueueFull:
    def test_503_when_saturated(self, pipeline, sketch_b64):
        app = create_app(pipeline, queue_depth=1, checkpoint_name="micro")
        with TestClient(app) as c:
            codes = []
            for seed in range(6):
                codes.append(
                    c.post("/v1/jobs", json={"sketch": sketch_b64, "seed": seed}).status_code
                )
            assert 503 in codes
            full = [
                c.post("/v1/jobs", json={"sketch": sketch_b64, "seed": 99}).json()
                for _ in range(2)
            ]
            assert any(body.get("error") == "queue_full" for body in full)
