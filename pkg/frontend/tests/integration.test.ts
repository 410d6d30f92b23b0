/**
 * End-to-end round trip against the live service: a scripted stroke list
 * exports a PNG (hash-stable), the service accepts it and streams back
 * one preview per scale, all renderable by the viewer math.
 */

import { existsSync, readFileSync } from "node:fs";
import path from "node:path";

import { describe, expect, it } from "vitest";

import { ApiClient, ScaleResult } from "../src/api.js";
import { DEFAULT_ORBIT, project } from "../src/camera.js";
import { contentHash, encodeGrayPng, toBase64 } from "../src/png.js";
import { rasterizeStrokes } from "../src/raster.js";
import { CanvasState } from "../src/strokes.js";

const URL_FILE = path.resolve(__dirname, "..", ".tmp-service", "url.txt");
const serviceUrl = existsSync(URL_FILE) ? readFileSync(URL_FILE, "utf-8").trim() : null;

function scriptedState(): CanvasState {
  const state = new CanvasState({ seed: 123, seedLocked: true });
  // a rough hairstyle silhouette around the head guide
  state.addStroke({
    points: [
      [0.28, 0.25],
      [0.26, 0.5],
      [0.3, 0.75],
    ],
    width: 0.03,
    eraser: false,
  });
  state.addStroke({
    points: [
      [0.72, 0.25],
      [0.74, 0.5],
      [0.7, 0.75],
    ],
    width: 0.03,
    eraser: false,
  });
  state.addStroke({
    points: [
      [0.3, 0.22],
      [0.5, 0.14],
      [0.7, 0.22],
    ],
    width: 0.03,
    eraser: false,
  });
  return state;
}

describe.skipIf(serviceUrl === null)("live service round trip", () => {
  it("exports a hash-stable PNG and receives all scale previews", async () => {
    const client = new ApiClient(serviceUrl!);
    const models = await client.models();
    const size = models[0].sketch_size as number;
    const numScales = models[0].num_scales as number;

    const exportOnce = () => {
      const state = scriptedState();
      const pixels = rasterizeStrokes(state.getStrokes(), size, { includeGuide: true });
      return encodeGrayPng(pixels, size);
    };
    const png1 = exportOnce();
    const png2 = exportOnce();
    expect(contentHash(png1)).toBe(contentHash(png2));

    const id = await client.submit({ sketch: toBase64(png1), seed: 123 });
    const scales: ScaleResult[] = [];
    const snap = await client.pollJob(id, (r) => scales.push(r), {
      intervalMs: 100,
      timeoutMs: 240_000,
    });
    expect(snap.status).toBe("done");
    expect(scales.map((s) => s.scale)).toEqual(
      Array.from({ length: numScales }, (_, i) => i + 1)
    );

    // every preview renders through the viewer projection without error
    for (const result of scales) {
      expect(result.num_strands).toBeGreaterThan(0);
      let projected = 0;
      for (const strand of result.preview) {
        for (const p of strand) {
          const q = project([p[0], p[1], p[2]], DEFAULT_ORBIT, 280);
          expect(Number.isFinite(q.x)).toBe(true);
          expect(Number.isFinite(q.y)).toBe(true);
          if (q.visible) projected++;
        }
      }
      expect(projected).toBeGreaterThan(0);
    }
  }, 300_000);
});
