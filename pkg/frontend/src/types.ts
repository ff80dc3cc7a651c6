export interface Point {
  x: number;
  y: number;
}

export interface PointPair {
  anchor: Point;
  objective: Point;
}

/** Editing parameters mirrored by the form; defaults match the engine. */
export interface DragUiParams {
  tEdit: number;
  tRefine: number;
  r1: number;
  r2: number;
  lambda: number;
  lr: number;
  maxSteps: number;
  propagate: boolean;
  tap: string;
}

export const DEFAULT_PARAMS: DragUiParams = {
  tEdit: 35,
  tRefine: 10,
  r1: 1,
  r2: 3,
  lambda: 0.1,
  lr: 0.01,
  maxSteps: 80,
  propagate: true,
  tap: "bottleneck",
};

export interface HealthInfo {
  model: string;
  image_size: number;
  K: number;
}

export interface ProgressRecord {
  state: string;
  iteration: number;
  losses: { alignment: number; mask: number };
  anchors: [number, number][];
  trajectory_len: number;
}

export interface DragResult {
  image_png_base64: string;
  md: number;
  fidelity: number;
  status: string;
}

export type RunState =
  | "idle"
  | "running"
  | "done"
  | "failed";
