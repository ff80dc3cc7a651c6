import { DEFAULT_PARAMS, DragUiParams } from "./types.js";

/** Wire body for the drag request's params field. */
export interface ParamsBody {
  t_edit: number;
  t_refine: number;
  r1: number;
  r2: number;
  lambda: number;
  lr: number;
  max_steps: number;
  propagate: boolean;
  tap: string;
}

export function toRequestBody(p: DragUiParams): ParamsBody {
  return {
    t_edit: p.tEdit,
    t_refine: p.tRefine,
    r1: p.r1,
    r2: p.r2,
    lambda: p.lambda,
    lr: p.lr,
    max_steps: p.maxSteps,
    propagate: p.propagate,
    tap: p.tap,
  };
}

export function fromRequestBody(body: ParamsBody): DragUiParams {
  return {
    tEdit: body.t_edit,
    tRefine: body.t_refine,
    r1: body.r1,
    r2: body.r2,
    lambda: body.lambda,
    lr: body.lr,
    maxSteps: body.max_steps,
    propagate: body.propagate,
    tap: body.tap,
  };
}

/** Parse one form field; falls back to the default when blank or invalid. */
export function parseField(
  name: keyof DragUiParams,
  raw: string,
): number | boolean | string {
  const fallback = DEFAULT_PARAMS[name];
  if (typeof fallback === "boolean") return raw === "true" || raw === "on";
  if (typeof fallback === "string") return raw.trim() || fallback;
  const value = Number(raw);
  return Number.isFinite(value) ? value : fallback;
}

export function validateParams(p: DragUiParams, kSteps: number): string | null {
  if (!(p.tRefine >= 0 && p.tRefine < p.tEdit && p.tEdit <= kSteps)) {
    return `need 0 <= refine < edit <= ${kSteps}`;
  }
  if (p.r1 < 0 || p.r2 < 1) return "need r1 >= 0 and r2 >= 1";
  if (p.lambda < 0 || p.lr <= 0) return "need lambda >= 0 and lr > 0";
  if (p.maxSteps < 0) return "need max steps >= 0";
  return null;
}
