import { describe, expect, it } from "vitest";
import { MaskModel } from "../src/mask.js";

describe("mask model", () => {
  it("starts empty so the request omits the mask", () => {
    expect(new MaskModel(16).isEmpty()).toBe(true);
  });

  it("stroke paints and erase removes", () => {
    const mask = new MaskModel(16);
    mask.stroke({ x: 8, y: 8 }, 2);
    expect(mask.isEmpty()).toBe(false);
    expect(mask.at(8, 8)).toBe(true);
    expect(mask.at(0, 0)).toBe(false);
    mask.stroke({ x: 8, y: 8 }, 3, true);
    expect(mask.isEmpty()).toBe(true);
  });

  it("full fill marks everything editable", () => {
    const mask = new MaskModel(8);
    mask.fill();
    expect(mask.at(0, 0)).toBe(true);
    expect(mask.at(7, 7)).toBe(true);
    expect([...mask.toGray()].every((v) => v === 255)).toBe(true);
  });

  it("clips strokes at the border", () => {
    const mask = new MaskModel(8);
    mask.stroke({ x: 0, y: 0 }, 2);
    expect(mask.at(0, 0)).toBe(true);
    expect(mask.isEmpty()).toBe(false);
  });

  it("exports 255-valued gray bytes for painted cells", () => {
    const mask = new MaskModel(4);
    mask.stroke({ x: 1, y: 1 }, 0.5);
    const gray = mask.toGray();
    expect(gray[1 * 4 + 1]).toBe(255);
    expect(gray[0]).toBe(0);
  });
});
