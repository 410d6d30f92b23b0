/**
 * Stroke model and editor state for the sketch canvas.
 *
 * Coordinates are normalized to [0, 1]^2 so the same stroke list can be
 * rendered at any display size and exported at the service resolution.
 * Undo/redo snapshots the stroke list; round-tripping undo and redo
 * restores the identical list.
 */

export interface Stroke {
  points: [number, number][];
  width: number; // brush diameter in normalized units
  eraser: boolean;
}

export interface CanvasParams {
  densityLevel: number;
  cfgScale: number;
  seed: number;
  seedLocked: boolean;
  showGuide: boolean;
}

export interface CanvasStateData {
  strokes: Stroke[];
  params: CanvasParams;
}

export const DEFAULT_PARAMS: CanvasParams = {
  densityLevel: 3,
  cfgScale: 1.0,
  seed: 0,
  seedLocked: false,
  showGuide: true,
};

function cloneStrokes(strokes: Stroke[]): Stroke[] {
  return strokes.map((s) => ({
    points: s.points.map((p) => [p[0], p[1]] as [number, number]),
    width: s.width,
    eraser: s.eraser,
  }));
}

export class CanvasState {
  private strokes: Stroke[] = [];
  private undoStack: Stroke[][] = [];
  private redoStack: Stroke[][] = [];
  params: CanvasParams;

  constructor(params: Partial<CanvasParams> = {}) {
    this.params = { ...DEFAULT_PARAMS, ...params };
  }

  getStrokes(): Stroke[] {
    return cloneStrokes(this.strokes);
  }

  get strokeCount(): number {
    return this.strokes.length;
  }

  addStroke(stroke: Stroke): void {
    if (stroke.points.length < 1) return;
    this.undoStack.push(cloneStrokes(this.strokes));
    this.redoStack = [];
    this.strokes.push({
      points: stroke.points.map((p) => [p[0], p[1]] as [number, number]),
      width: stroke.width,
      eraser: stroke.eraser,
    });
  }

  clear(): void {
    if (this.strokes.length === 0) return;
    this.undoStack.push(cloneStrokes(this.strokes));
    this.redoStack = [];
    this.strokes = [];
  }

  canUndo(): boolean {
    return this.undoStack.length > 0;
  }

  canRedo(): boolean {
    return this.redoStack.length > 0;
  }

  undo(): boolean {
    const prev = this.undoStack.pop();
    if (prev === undefined) return false;
    this.redoStack.push(cloneStrokes(this.strokes));
    this.strokes = prev;
    return true;
  }

  redo(): boolean {
    const next = this.redoStack.pop();
    if (next === undefined) return false;
    this.undoStack.push(cloneStrokes(this.strokes));
    this.strokes = next;
    return true;
  }

  serialize(): string {
    const data: CanvasStateData = { strokes: this.strokes, params: this.params };
    return JSON.stringify(data);
  }

  static deserialize(text: string): CanvasState {
    const data = JSON.parse(text) as CanvasStateData;
    const state = new CanvasState(data.params);
    state.strokes = cloneStrokes(data.strokes ?? []);
    return state;
  }
}

export interface StateStorage {
  getItem(key: string): string | null;
  setItem(key: string, value: string): void;
}

const STORAGE_KEY = "strandforge-canvas";

export function saveState(state: CanvasState, storage: StateStorage): void {
  storage.setItem(STORAGE_KEY, state.serialize());
}

export function loadState(storage: StateStorage): CanvasState | null {
  const text = storage.getItem(STORAGE_KEY);
  if (text === null) return null;
  try {
    return CanvasState.deserialize(text);
  } catch {
    return null;
  }
}
