import { MaskModel } from "./mask.js";
import { Point, PointPair, ProgressRecord } from "./types.js";

/** View scale: image pixels to device pixels (display-only). */
export function makeScale(imageSize: number, canvasSize: number) {
  const s = canvasSize / imageSize;
  return {
    toImage(e: { offsetX: number; offsetY: number }): Point {
      return { x: Math.round(e.offsetX / s), y: Math.round(e.offsetY / s) };
    },
    toCanvas(p: Point): [number, number] {
      return [(p.x + 0.5) * s, (p.y + 0.5) * s];
    },
    s,
  };
}

export function drawImageBase64(
  ctx: CanvasRenderingContext2D,
  pngBase64: string,
  canvasSize: number,
): Promise<void> {
  return new Promise((resolve, reject) => {
    const img = new Image();
    img.onload = () => {
      ctx.imageSmoothingEnabled = false;
      ctx.clearRect(0, 0, canvasSize, canvasSize);
      ctx.drawImage(img, 0, 0, canvasSize, canvasSize);
      resolve();
    };
    img.onerror = () => reject(new Error("cannot decode image"));
    img.src = `data:image/png;base64,${pngBase64}`;
  });
}

export function drawPairs(
  ctx: CanvasRenderingContext2D,
  pairs: PointPair[],
  pending: Point | null,
  scale: ReturnType<typeof makeScale>,
): void {
  ctx.lineWidth = 2;
  for (const pair of pairs) {
    const [ax, ay] = scale.toCanvas(pair.anchor);
    const [bx, by] = scale.toCanvas(pair.objective);
    ctx.strokeStyle = "rgba(255,255,255,0.8)";
    ctx.beginPath();
    ctx.moveTo(ax, ay);
    ctx.lineTo(bx, by);
    ctx.stroke();
    dot(ctx, ax, ay, "#e43");
    dot(ctx, bx, by, "#36e");
  }
  if (pending) {
    const [px, py] = scale.toCanvas(pending);
    dot(ctx, px, py, "#e43");
  }
}

export function drawAnchors(
  ctx: CanvasRenderingContext2D,
  anchors: [number, number][],
  scale: ReturnType<typeof makeScale>,
): void {
  for (const [x, y] of anchors) {
    const [cx, cy] = scale.toCanvas({ x, y });
    dot(ctx, cx, cy, "#fa0");
  }
}

export function drawMaskOverlay(
  ctx: CanvasRenderingContext2D,
  mask: MaskModel,
  scale: ReturnType<typeof makeScale>,
): void {
  ctx.fillStyle = "rgba(80,180,90,0.35)";
  for (let y = 0; y < mask.size; y++) {
    for (let x = 0; x < mask.size; x++) {
      if (mask.at(x, y)) ctx.fillRect(x * scale.s, y * scale.s, scale.s, scale.s);
    }
  }
}

function dot(ctx: CanvasRenderingContext2D, x: number, y: number, color: string) {
  ctx.fillStyle = color;
  ctx.beginPath();
  ctx.arc(x, y, 4, 0, Math.PI * 2);
  ctx.fill();
}

/** Encode an 8-bit grayscale buffer as a PNG via an offscreen canvas. */
export function encodeGrayPng(gray: Uint8Array, size: number): string {
  const canvas = document.createElement("canvas");
  canvas.width = size;
  canvas.height = size;
  const ctx = canvas.getContext("2d")!;
  const img = ctx.createImageData(size, size);
  for (let i = 0; i < gray.length; i++) {
    img.data[4 * i] = img.data[4 * i + 1] = img.data[4 * i + 2] = gray[i];
    img.data[4 * i + 3] = 255;
  }
  ctx.putImageData(img, 0, 0);
  return canvas.toDataURL("image/png").split(",", 2)[1];
}

/** Incremental loss chart over progress records. */
export class LossChart {
  private records: ProgressRecord[] = [];

  constructor(private readonly canvas: HTMLCanvasElement) {}

  reset(): void {
    this.records = [];
    this.draw();
  }

  push(record: ProgressRecord): void {
    if (record.iteration > 0) this.records.push(record);
    this.draw();
  }

  private draw(): void {
    const ctx = this.canvas.getContext("2d")!;
    const { width: w, height: h } = this.canvas;
    ctx.clearRect(0, 0, w, h);
    ctx.strokeStyle = "#888";
    ctx.strokeRect(0.5, 0.5, w - 1, h - 1);
    if (this.records.length < 2) return;
    const xs = this.records.map((r) => r.iteration);
    const ys = this.records.map((r) => r.losses.alignment + r.losses.mask);
    const yMax = Math.max(...ys, 1e-9);
    const xMax = Math.max(...xs);
    ctx.strokeStyle = "#4af";
    ctx.lineWidth = 1.5;
    ctx.beginPath();
    this.records.forEach((r, i) => {
      const x = (xs[i] / xMax) * (w - 8) + 4;
      const y = h - 4 - (ys[i] / yMax) * (h - 8);
      if (i === 0) ctx.moveTo(x, y);
      else ctx.lineTo(x, y);
    });
    ctx.stroke();
  }
}

/** Before/after comparison: a draggable split between two images. */
export class CompareSlider {
  private fraction = 0.5;
  private before: HTMLImageElement | null = null;
  private after: HTMLImageElement | null = null;

  constructor(private readonly canvas: HTMLCanvasElement) {
    const move = (clientX: number) => {
      const rect = canvas.getBoundingClientRect();
      this.fraction = Math.min(1, Math.max(0, (clientX - rect.left) / rect.width));
      this.draw();
    };
    let dragging = false;
    canvas.addEventListener("pointerdown", (e) => {
      dragging = true;
      move(e.clientX);
    });
    window.addEventListener("pointermove", (e) => dragging && move(e.clientX));
    window.addEventListener("pointerup", () => (dragging = false));
  }

  async setImages(beforeB64: string, afterB64: string): Promise<void> {
    this.before = await loadImage(beforeB64);
    this.after = await loadImage(afterB64);
    this.draw();
  }

  private draw(): void {
    if (!this.before || !this.after) return;
    const ctx = this.canvas.getContext("2d")!;
    const { width: w, height: h } = this.canvas;
    ctx.imageSmoothingEnabled = false;
    ctx.clearRect(0, 0, w, h);
    ctx.drawImage(this.after, 0, 0, w, h);
    const split = Math.round(this.fraction * w);
    if (split > 0) {
      ctx.save();
      ctx.beginPath();
      ctx.rect(0, 0, split, h);
      ctx.clip();
      ctx.drawImage(this.before, 0, 0, w, h);
      ctx.restore();
    }
    ctx.strokeStyle = "#fff";
    ctx.lineWidth = 2;
    ctx.beginPath();
    ctx.moveTo(split + 0.5, 0);
    ctx.lineTo(split + 0.5, h);
    ctx.stroke();
  }
}

function loadImage(b64: string): Promise<HTMLImageElement> {
  return new Promise((resolve, reject) => {
    const img = new Image();
    img.onload = () => resolve(img);
    img.onerror = () => reject(new Error("cannot decode image"));
    img.src = `data:image/png;base64,${b64}`;
  });
}
