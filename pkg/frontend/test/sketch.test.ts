import { describe, expect, it } from "vitest";

import {
  SKETCH_SIZE,
  decodePgm,
  encodePgm,
  hasInk,
  isDrawableStroke,
  rasterizeSketch,
} from "../src/sketch.js";

describe("rasterizeSketch", () => {
  it("produces a blank raster for no strokes", () => {
    const raster = rasterizeSketch([]);
    expect(raster.length).toBe(SKETCH_SIZE * SKETCH_SIZE);
    expect(hasInk(raster)).toBe(false);
  });

  it("ignores degenerate single-point strokes", () => {
    const stroke = { points: [{ x: 10, y: 10 }], width: 3 };
    expect(isDrawableStroke(stroke)).toBe(false);
    expect(hasInk(rasterizeSketch([stroke]))).toBe(false);
  });

  it("draws a straight stroke as one connected run of the stroke width", () => {
    const raster = rasterizeSketch([
      { points: [{ x: 20, y: 128 }, { x: 220, y: 128 }], width: 4 },
    ]);
    // every column along the stroke carries ink
    for (let x = 21; x < 220; x++) {
      let column = 0;
      for (let y = 0; y < SKETCH_SIZE; y++) {
        if (raster[y * SKETCH_SIZE + x] > 0) {
          column++;
        }
      }
      expect(column).toBeGreaterThanOrEqual(3);
      expect(column).toBeLessThanOrEqual(5);
    }
    // nothing outside the stroke band
    for (let y = 0; y < SKETCH_SIZE; y++) {
      if (Math.abs(y - 128) > 4) {
        expect(raster[y * SKETCH_SIZE + 120]).toBe(0);
      }
    }
  });

  it("connectivity: consecutive columns of a diagonal stroke overlap", () => {
    const raster = rasterizeSketch([
      { points: [{ x: 10, y: 10 }, { x: 200, y: 180 }], width: 3 },
    ]);
    const rowsAt = (x: number) => {
      const rows: number[] = [];
      for (let y = 0; y < SKETCH_SIZE; y++) {
        if (raster[y * SKETCH_SIZE + x] > 0) {
          rows.push(y);
        }
      }
      return rows;
    };
    for (let x = 12; x < 198; x++) {
      const here = new Set(rowsAt(x));
      const next = rowsAt(x + 1);
      expect(next.some((y) => here.has(y) || here.has(y - 1) || here.has(y + 1)))
        .toBe(true);
    }
  });
});

describe("PGM codec", () => {
  it("encode/decode round trip is pixel-identical", () => {
    const raster = rasterizeSketch([
      { points: [{ x: 30, y: 40 }, { x: 180, y: 90 }, { x: 60, y: 200 }], width: 5 },
    ]);
    const decoded = decodePgm(encodePgm(raster));
    expect(decoded.width).toBe(SKETCH_SIZE);
    expect(decoded.height).toBe(SKETCH_SIZE);
    expect(decoded.bits).toEqual(raster);
  });

  it("rejects non-PGM payloads", () => {
    expect(() => decodePgm(new TextEncoder().encode("P6\n2 2\n255\n"))).toThrow();
  });
});
