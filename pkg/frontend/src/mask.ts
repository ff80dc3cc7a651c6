import { Point } from "./types.js";

/**
 * Editable-region mask painted in image pixels (1 = editable).
 * Purely a data model; rendering and PNG export live in the DOM layer.
 */
export class MaskModel {
  private readonly cells: Uint8Array;
  readonly size: number;

  constructor(size: number) {
    this.size = size;
    this.cells = new Uint8Array(size * size);
  }

  /** Stamp a round brush at an image-space point; erase clears instead. */
  stroke(center: Point, radius: number, erase = false): void {
    const lo = Math.floor(-radius), hi = Math.ceil(radius);
    for (let dy = lo; dy <= hi; dy++) {
      for (let dx = lo; dx <= hi; dx++) {
        if (dx * dx + dy * dy > radius * radius) continue;
        const x = Math.round(center.x + dx);
        const y = Math.round(center.y + dy);
        if (x < 0 || y < 0 || x >= this.size || y >= this.size) continue;
        this.cells[y * this.size + x] = erase ? 0 : 1;
      }
    }
  }

  fill(): void {
    this.cells.fill(1);
  }

  clear(): void {
    this.cells.fill(0);
  }

  at(x: number, y: number): boolean {
    return this.cells[y * this.size + x] === 1;
  }

  /** An untouched (or fully erased) mask is omitted from the request. */
  isEmpty(): boolean {
    return this.cells.every((c) => c === 0);
  }

  /** Grayscale bytes (255 = editable) for PNG export. */
  toGray(): Uint8Array {
    const out = new Uint8Array(this.cells.length);
    for (let i = 0; i < this.cells.length; i++) out[i] = this.cells[i] ? 255 : 0;
    return out;
  }
}
