/**
 * Canvas strand viewer: projected polylines with orbit controls.
 */

import {
  DEFAULT_ORBIT,
  OrbitState,
  applyDrag,
  applyZoom,
  project,
} from "./camera.js";

export class StrandViewer {
  private orbit: OrbitState = { ...DEFAULT_ORBIT };
  private strands: number[][][] = [];
  private dragging = false;
  private lastX = 0;
  private lastY = 0;

  constructor(private canvas: HTMLCanvasElement) {
    canvas.addEventListener("pointerdown", (e) => {
      this.dragging = true;
      this.lastX = e.clientX;
      this.lastY = e.clientY;
      canvas.setPointerCapture(e.pointerId);
    });
    canvas.addEventListener("pointermove", (e) => {
      if (!this.dragging) return;
      this.orbit = applyDrag(this.orbit, e.clientX - this.lastX, e.clientY - this.lastY);
      this.lastX = e.clientX;
      this.lastY = e.clientY;
      this.render();
    });
    canvas.addEventListener("pointerup", () => {
      this.dragging = false;
    });
    canvas.addEventListener("wheel", (e) => {
      e.preventDefault();
      this.orbit = applyZoom(this.orbit, e.deltaY);
      this.render();
    });
  }

  setStrands(strands: number[][][]): void {
    this.strands = strands;
    this.render();
  }

  render(): void {
    const ctx = this.canvas.getContext("2d");
    if (!ctx) return;
    const size = this.canvas.width;
    ctx.fillStyle = "#10131a";
    ctx.fillRect(0, 0, size, size);
    ctx.strokeStyle = "#cfd8e3";
    ctx.lineWidth = 0.7;
    for (const strand of this.strands) {
      ctx.beginPath();
      let started = false;
      for (const p of strand) {
        const q = project([p[0], p[1], p[2]], this.orbit, size);
        if (!q.visible) {
          started = false;
          continue;
        }
        if (!started) {
          ctx.moveTo(q.x, q.y);
          started = true;
        } else {
          ctx.lineTo(q.x, q.y);
        }
      }
      ctx.stroke();
    }
  }
}
