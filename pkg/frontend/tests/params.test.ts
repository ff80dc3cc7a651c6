import { describe, expect, it } from "vitest";
import { fromRequestBody, parseField, toRequestBody, validateParams } from "../src/params.js";
import { DEFAULT_PARAMS } from "../src/types.js";

describe("parameter form round trip", () => {
  it("serializes defaults to the wire names", () => {
    expect(toRequestBody(DEFAULT_PARAMS)).toEqual({
      t_edit: 35,
      t_refine: 10,
      r1: 1,
      r2: 3,
      lambda: 0.1,
      lr: 0.01,
      max_steps: 80,
      propagate: true,
      tap: "bottleneck",
    });
  });

  it("round-trips arbitrary values", () => {
    const params = {
      tEdit: 44,
      tRefine: 3,
      r1: 2,
      r2: 5,
      lambda: 0.25,
      lr: 0.002,
      maxSteps: 17,
      propagate: false,
      tap: "decoder_block1",
    };
    expect(fromRequestBody(toRequestBody(params))).toEqual(params);
  });

  it("parses form fields with defaults on junk", () => {
    expect(parseField("tEdit", "42")).toBe(42);
    expect(parseField("tEdit", "not a number")).toBe(DEFAULT_PARAMS.tEdit);
    expect(parseField("propagate", "on")).toBe(true);
    expect(parseField("propagate", "")).toBe(false);
    expect(parseField("tap", "  ")).toBe("bottleneck");
  });

  it("validates the step window", () => {
    expect(validateParams(DEFAULT_PARAMS, 50)).toBeNull();
    expect(validateParams({ ...DEFAULT_PARAMS, tEdit: 60 }, 50)).toMatch(/edit/);
    expect(validateParams({ ...DEFAULT_PARAMS, tRefine: 35 }, 50)).toMatch(/refine/);
    expect(validateParams({ ...DEFAULT_PARAMS, r2: 0 }, 50)).toMatch(/r2/);
  });
});
