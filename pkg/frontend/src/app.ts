/**
 * Sketch-to-strands app wiring: draw, pick density, submit, watch
 * per-scale hairstyles stream in, compare before/after edits.
 */

import { ApiClient, JobSnapshot, ScaleResult } from "./api.js";
import { encodeGrayPng, toBase64 } from "./png.js";
import { guidePolylines, rasterizeStrokes } from "./raster.js";
import { CanvasState, Stroke, loadState, saveState } from "./strokes.js";
import { StrandViewer } from "./viewer.js";

const EXPORT_SIZE_FALLBACK = 64;

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

export function exportSketchPng(state: CanvasState, size: number): Uint8Array {
  const pixels = rasterizeStrokes(state.getStrokes(), size, {
    includeGuide: state.params.showGuide,
  });
  return encodeGrayPng(pixels, size);
}

class App {
  state: CanvasState;
  client: ApiClient;
  exportSize = EXPORT_SIZE_FALLBACK;
  numScales = 3;
  private drawCanvas: HTMLCanvasElement;
  private viewers = new Map<number, StrandViewer>();
  private lastJobs: { id: string; results: ScaleResult[] }[] = [];
  private currentStroke: Stroke | null = null;

  constructor() {
    this.state = loadState(window.localStorage) ?? new CanvasState();
    this.client = new ApiClient("");
    this.drawCanvas = el<HTMLCanvasElement>("draw");
    this.bindDrawing();
    this.bindControls();
    this.redraw();
    void this.discoverModel();
  }

  private async discoverModel(): Promise<void> {
    try {
      const models = await this.client.models();
      if (models.length > 0) {
        this.exportSize = models[0].sketch_size ?? EXPORT_SIZE_FALLBACK;
        this.numScales = models[0].num_scales ?? 3;
        const slider = el<HTMLInputElement>("density");
        slider.max = String(this.numScales);
      }
      el<HTMLSpanElement>("status").textContent = "service ready";
    } catch {
      el<HTMLSpanElement>("status").textContent = "service unreachable";
    }
  }

  private canvasPoint(e: PointerEvent): [number, number] {
    const rect = this.drawCanvas.getBoundingClientRect();
    return [
      (e.clientX - rect.left) / rect.width,
      (e.clientY - rect.top) / rect.height,
    ];
  }

  private bindDrawing(): void {
    const canvas = this.drawCanvas;
    canvas.addEventListener("pointerdown", (e) => {
      canvas.setPointerCapture(e.pointerId);
      this.currentStroke = {
        points: [this.canvasPoint(e)],
        width: Number(el<HTMLInputElement>("brush").value) / this.exportSize,
        eraser: el<HTMLInputElement>("eraser").checked,
      };
    });
    canvas.addEventListener("pointermove", (e) => {
      if (!this.currentStroke) return;
      this.currentStroke.points.push(this.canvasPoint(e));
      this.redraw(this.currentStroke);
    });
    const finish = () => {
      if (!this.currentStroke) return;
      this.state.addStroke(this.currentStroke);
      this.currentStroke = null;
      this.persist();
      this.redraw();
    };
    canvas.addEventListener("pointerup", finish);
    canvas.addEventListener("pointerleave", finish);
  }

  private bindControls(): void {
    el<HTMLButtonElement>("undo").onclick = () => {
      this.state.undo();
      this.persist();
      this.redraw();
    };
    el<HTMLButtonElement>("redo").onclick = () => {
      this.state.redo();
      this.persist();
      this.redraw();
    };
    el<HTMLButtonElement>("clear").onclick = () => {
      this.state.clear();
      this.persist();
      this.redraw();
    };
    el<HTMLInputElement>("guide").checked = this.state.params.showGuide;
    el<HTMLInputElement>("guide").onchange = (e) => {
      this.state.params.showGuide = (e.target as HTMLInputElement).checked;
      this.persist();
      this.redraw();
    };
    el<HTMLInputElement>("density").value = String(this.state.params.densityLevel);
    el<HTMLInputElement>("cfg").value = String(this.state.params.cfgScale);
    el<HTMLInputElement>("seed").value = String(this.state.params.seed);
    el<HTMLInputElement>("seedlock").checked = this.state.params.seedLocked;
    el<HTMLButtonElement>("generate").onclick = () => void this.submit();
  }

  private persist(): void {
    saveState(this.state, window.localStorage);
  }

  redraw(liveStroke: Stroke | null = null): void {
    const ctx = this.drawCanvas.getContext("2d");
    if (!ctx) return;
    const view = this.drawCanvas.width;
    ctx.fillStyle = "#ffffff";
    ctx.fillRect(0, 0, view, view);
    if (this.state.params.showGuide) {
      ctx.strokeStyle = "#c9ced6";
      ctx.lineWidth = 1;
      for (const line of guidePolylines()) {
        ctx.beginPath();
        line.forEach(([x, y], i) =>
          i === 0 ? ctx.moveTo(x * view, y * view) : ctx.lineTo(x * view, y * view)
        );
        ctx.stroke();
      }
    }
    const strokes = this.state.getStrokes();
    if (liveStroke) strokes.push(liveStroke);
    for (const s of strokes) {
      ctx.strokeStyle = s.eraser ? "#ffffff" : "#1b1e24";
      ctx.lineWidth = Math.max(1, s.width * view);
      ctx.lineCap = "round";
      ctx.beginPath();
      s.points.forEach(([x, y], i) =>
        i === 0 ? ctx.moveTo(x * view, y * view) : ctx.lineTo(x * view, y * view)
      );
      ctx.stroke();
    }
  }

  private viewerFor(scale: number): StrandViewer {
    let viewer = this.viewers.get(scale);
    if (viewer) return viewer;
    const tabs = el<HTMLDivElement>("scales");
    const wrap = document.createElement("div");
    wrap.className = "scale-card";
    const label = document.createElement("div");
    label.textContent = `scale ${scale}`;
    const canvas = document.createElement("canvas");
    canvas.width = 280;
    canvas.height = 280;
    wrap.append(label, canvas);
    tabs.append(wrap);
    viewer = new StrandViewer(canvas);
    this.viewers.set(scale, viewer);
    return viewer;
  }

  private async submit(): Promise<void> {
    this.state.params.densityLevel = Number(el<HTMLInputElement>("density").value);
    this.state.params.cfgScale = Number(el<HTMLInputElement>("cfg").value);
    this.state.params.seedLocked = el<HTMLInputElement>("seedlock").checked;
    if (!this.state.params.seedLocked) {
      this.state.params.seed = Math.floor(Math.random() * 1e9);
      el<HTMLInputElement>("seed").value = String(this.state.params.seed);
    } else {
      this.state.params.seed = Number(el<HTMLInputElement>("seed").value);
    }
    this.persist();

    const png = exportSketchPng(this.state, this.exportSize);
    const status = el<HTMLSpanElement>("status");
    status.textContent = "submitting...";
    try {
      const id = await this.client.submit({
        sketch: toBase64(png),
        seed: this.state.params.seed,
        cfg_scale: this.state.params.cfgScale,
      });
      const results: ScaleResult[] = [];
      const snap = await this.client.pollJob(id, (res) => {
        results.push(res);
        status.textContent = `scale ${res.scale}/${this.numScales} ready`;
        this.viewerFor(res.scale).setStrands(res.preview);
      });
      status.textContent = `done (${snap.results.length} scales)`;
      this.lastJobs.unshift({ id, results });
      this.lastJobs = this.lastJobs.slice(0, 2);
      this.renderCompare();
    } catch (err) {
      status.textContent = `error: ${(err as Error).message}`;
    }
  }

  private renderCompare(): void {
    const host = el<HTMLDivElement>("compare");
    host.innerHTML = "";
    if (this.lastJobs.length < 2) return;
    for (const [label, job] of [
      ["current", this.lastJobs[0]],
      ["previous", this.lastJobs[1]],
    ] as const) {
      const wrap = document.createElement("div");
      wrap.className = "scale-card";
      const title = document.createElement("div");
      title.textContent = `${label} (${job.id.slice(0, 8)})`;
      const canvas = document.createElement("canvas");
      canvas.width = 280;
      canvas.height = 280;
      wrap.append(title, canvas);
      host.append(wrap);
      const viewer = new StrandViewer(canvas);
      const last = job.results[job.results.length - 1];
      if (last) viewer.setStrands(last.preview);
    }
  }
}

if (typeof document !== "undefined" && document.getElementById("draw")) {
  new App();
}
