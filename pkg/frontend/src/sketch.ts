/**
 * Canvas-free sketch rasterization.
 *
 * Strokes are rasterized into an 8-bit grayscale bitmap (0 background,
 * 255 ink) at the fixed 256x256 logical resolution the retrieval service
 * expects, with round caps and joins. Keeping this pure (no <canvas>)
 * makes the raster deterministic and unit-testable in node.
 */

export const SKETCH_SIZE = 256;

export interface SketchStroke {
  points: Array<{ x: number; y: number }>;
  width: number;
}

export function isDrawableStroke(stroke: SketchStroke): boolean {
  return stroke.points.length >= 2 && stroke.width > 0;
}

/** Stamp a filled disc; round caps and joins come from stamping densely. */
function stampDisc(bits: Uint8Array, size: number, cx: number, cy: number,
                   radius: number): void {
  const r2 = radius * radius;
  const x0 = Math.max(0, Math.floor(cx - radius));
  const x1 = Math.min(size - 1, Math.ceil(cx + radius));
  const y0 = Math.max(0, Math.floor(cy - radius));
  const y1 = Math.min(size - 1, Math.ceil(cy + radius));
  for (let y = y0; y <= y1; y++) {
    for (let x = x0; x <= x1; x++) {
      const dx = x + 0.5 - cx;
      const dy = y + 0.5 - cy;
      if (dx * dx + dy * dy <= r2) {
        bits[y * size + x] = 255;
      }
    }
  }
}

/**
 * Rasterize strokes to a grayscale bitmap (row-major, 0 or 255).
 * Returns an all-zero raster for no drawable strokes; callers block
 * submission of blank sketches.
 */
export function rasterizeSketch(strokes: SketchStroke[],
                                size: number = SKETCH_SIZE): Uint8Array {
  const bits = new Uint8Array(size * size);
  for (const stroke of strokes) {
    if (!isDrawableStroke(stroke)) {
      continue;
    }
    const radius = Math.max(0.5, stroke.width / 2);
    for (let i = 0; i + 1 < stroke.points.length; i++) {
      const a = stroke.points[i];
      const b = stroke.points[i + 1];
      const span = Math.hypot(b.x - a.x, b.y - a.y);
      const steps = Math.max(1, Math.ceil(span * 2));
      for (let s = 0; s <= steps; s++) {
        const t = s / steps;
        stampDisc(bits, size, a.x + (b.x - a.x) * t, a.y + (b.y - a.y) * t, radius);
      }
    }
  }
  return bits;
}

export function hasInk(bits: Uint8Array): boolean {
  return bits.some((v) => v > 0);
}

/** Encode the bitmap as binary PGM (P5), an 8-bit grayscale raster. */
export function encodePgm(bits: Uint8Array, size: number = SKETCH_SIZE): Uint8Array {
  const header = new TextEncoder().encode(`P5\n${size} ${size}\n255\n`);
  const out = new Uint8Array(header.length + bits.length);
  out.set(header, 0);
  out.set(bits, header.length);
  return out;
}

/** Decode a binary PGM produced by encodePgm (or an echoing endpoint). */
export function decodePgm(data: Uint8Array): { width: number; height: number; bits: Uint8Array } {
  let offset = 0;
  const tokens: string[] = [];
  while (tokens.length < 4 && offset < data.length) {
    while (offset < data.length && /\s/.test(String.fromCharCode(data[offset]))) {
      offset++;
    }
    let token = "";
    while (offset < data.length && !/\s/.test(String.fromCharCode(data[offset]))) {
      token += String.fromCharCode(data[offset]);
      offset++;
    }
    tokens.push(token);
  }
  offset++; // single whitespace after maxval
  if (tokens[0] !== "P5") {
    throw new Error(`not a binary PGM: ${tokens[0]}`);
  }
  const width = parseInt(tokens[1], 10);
  const height = parseInt(tokens[2], 10);
  return { width, height, bits: data.slice(offset, offset + width * height) };
}
