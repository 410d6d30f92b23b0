/**
 * Deterministic software rasterizer for stroke lists.
 *
 * Produces the square 8-bit grayscale buffer the service expects
 * (background 255, ink dark).  Strokes composite in order so erasers
 * remove earlier ink; identical stroke lists always produce identical
 * bytes, which keeps the exported PNG hash-stable.
 */

import type { Stroke } from "./strokes.js";

/** Head-and-shoulder guide polylines in normalized sketch coordinates. */
export function guidePolylines(): [number, number][][] {
  const lines: [number, number][][] = [];
  const circle: [number, number][] = [];
  for (let i = 0; i <= 48; i++) {
    const a = (2 * Math.PI * i) / 48;
    circle.push([0.5 + 0.22 * Math.cos(a), 0.38 + 0.26 * Math.sin(a)]);
  }
  lines.push(circle);
  // neck and shoulders, mirrored
  lines.push([
    [0.46, 0.66],
    [0.46, 0.74],
    [0.24, 0.80],
    [0.16, 0.84],
  ]);
  lines.push([
    [0.54, 0.66],
    [0.54, 0.74],
    [0.76, 0.80],
    [0.84, 0.84],
  ]);
  return lines;
}

function stampDisk(
  buf: Uint8ClampedArray,
  size: number,
  cx: number,
  cy: number,
  radius: number,
  value: number,
  eraser: boolean
): void {
  const r = Math.max(radius, 0.6);
  const x0 = Math.max(0, Math.floor(cx - r - 1));
  const x1 = Math.min(size - 1, Math.ceil(cx + r + 1));
  const y0 = Math.max(0, Math.floor(cy - r - 1));
  const y1 = Math.min(size - 1, Math.ceil(cy + r + 1));
  for (let y = y0; y <= y1; y++) {
    for (let x = x0; x <= x1; x++) {
      const d = Math.hypot(x - cx, y - cy);
      // 1px anti-aliased edge
      const cov = Math.min(1, Math.max(0, r + 0.5 - d));
      if (cov <= 0) continue;
      const idx = y * size + x;
      if (eraser) {
        buf[idx] = Math.max(buf[idx], Math.round(255 * cov + buf[idx] * (1 - cov)));
      } else {
        const ink = Math.round(255 * (1 - cov) + value * cov);
        buf[idx] = Math.min(buf[idx], ink);
      }
    }
  }
}

function drawPolyline(
  buf: Uint8ClampedArray,
  size: number,
  points: [number, number][],
  widthPx: number,
  value: number,
  eraser: boolean
): void {
  if (points.length === 0) return;
  const radius = widthPx / 2;
  if (points.length === 1) {
    stampDisk(buf, size, points[0][0] * size, points[0][1] * size, radius, value, eraser);
    return;
  }
  for (let i = 0; i + 1 < points.length; i++) {
    const ax = points[i][0] * size;
    const ay = points[i][1] * size;
    const bx = points[i + 1][0] * size;
    const by = points[i + 1][1] * size;
    const len = Math.hypot(bx - ax, by - ay);
    const steps = Math.max(1, Math.ceil(len * 2));
    for (let s = 0; s <= steps; s++) {
      const t = s / steps;
      stampDisk(buf, size, ax + t * (bx - ax), ay + t * (by - ay), radius, value, eraser);
    }
  }
}

export interface RasterOptions {
  includeGuide?: boolean;
}

/** Rasterize a stroke list to a size x size grayscale buffer. */
export function rasterizeStrokes(
  strokes: Stroke[],
  size: number,
  options: RasterOptions = {}
): Uint8ClampedArray {
  const buf = new Uint8ClampedArray(size * size).fill(255);
  if (options.includeGuide) {
    for (const line of guidePolylines()) {
      drawPolyline(buf, size, line, 1.0, 200, false); // light reference strokes
    }
  }
  for (const stroke of strokes) {
    drawPolyline(
      buf,
      size,
      stroke.points,
      Math.max(1, stroke.width * size),
      0,
      stroke.eraser
    );
  }
  return buf;
}

export function darkPixelCount(buf: Uint8ClampedArray, threshold = 128): number {
  let n = 0;
  for (let i = 0; i < buf.length; i++) if (buf[i] < threshold) n++;
  return n;
}
