import { describe, expect, it } from "vitest";

import { CanvasState, Stroke, loadState, saveState } from "../src/strokes.js";

function stroke(x: number): Stroke {
  return { points: [[x, 0.1], [x, 0.9]], width: 0.03, eraser: false };
}

describe("CanvasState undo/redo", () => {
  it("undo then redo restores the identical stroke list", () => {
    const state = new CanvasState();
    state.addStroke(stroke(0.2));
    state.addStroke(stroke(0.5));
    const before = JSON.stringify(state.getStrokes());
    expect(state.undo()).toBe(true);
    expect(state.strokeCount).toBe(1);
    expect(state.redo()).toBe(true);
    expect(JSON.stringify(state.getStrokes())).toBe(before);
  });

  it("multi-level undo walks back stroke by stroke", () => {
    const state = new CanvasState();
    for (const x of [0.1, 0.2, 0.3]) state.addStroke(stroke(x));
    state.undo();
    state.undo();
    expect(state.strokeCount).toBe(1);
    expect(state.getStrokes()[0].points[0][0]).toBeCloseTo(0.1);
  });

  it("new stroke clears the redo stack", () => {
    const state = new CanvasState();
    state.addStroke(stroke(0.1));
    state.addStroke(stroke(0.2));
    state.undo();
    state.addStroke(stroke(0.7));
    expect(state.canRedo()).toBe(false);
  });

  it("undo on empty history is a no-op", () => {
    const state = new CanvasState();
    expect(state.undo()).toBe(false);
  });

  it("clear is undoable", () => {
    const state = new CanvasState();
    state.addStroke(stroke(0.4));
    state.clear();
    expect(state.strokeCount).toBe(0);
    state.undo();
    expect(state.strokeCount).toBe(1);
  });

  it("getStrokes returns copies, not aliases", () => {
    const state = new CanvasState();
    state.addStroke(stroke(0.4));
    const copy = state.getStrokes();
    copy[0].points[0][0] = 0.999;
    expect(state.getStrokes()[0].points[0][0]).toBeCloseTo(0.4);
  });
});

describe("persistence", () => {
  function memoryStorage() {
    const data = new Map<string, string>();
    return {
      getItem: (k: string) => data.get(k) ?? null,
      setItem: (k: string, v: string) => void data.set(k, v),
    };
  }

  it("survives a save/load round trip", () => {
    const storage = memoryStorage();
    const state = new CanvasState({ densityLevel: 2, cfgScale: 2.5, seed: 42 });
    state.addStroke(stroke(0.3));
    saveState(state, storage);
    const back = loadState(storage);
    expect(back).not.toBeNull();
    expect(back!.params.densityLevel).toBe(2);
    expect(back!.params.seed).toBe(42);
    expect(JSON.stringify(back!.getStrokes())).toBe(JSON.stringify(state.getStrokes()));
  });

  it("returns null for empty or corrupt storage", () => {
    const storage = memoryStorage();
    expect(loadState(storage)).toBeNull();
    storage.setItem("strandforge-canvas", "{broken json");
    expect(loadState(storage)).toBeNull();
  });
});
