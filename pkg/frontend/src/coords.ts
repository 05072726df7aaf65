import type { Point } from "./types.js";

/**
 * Map a mouse event on a (possibly CSS-scaled) canvas to the slice pixel
 * under the cursor. The canvas draws the slice 1:1 into its backing store,
 * so the fraction across the bounding rect picks the column/row directly.
 */
export function pixelFromEvent(
  ev: { clientX: number; clientY: number },
  rect: { left: number; top: number; width: number; height: number },
  sliceW: number,
  sliceH: number,
): { col: number; row: number } {
  const fx = (ev.clientX - rect.left) / rect.width;
  const fy = (ev.clientY - rect.top) / rect.height;
  const col = clampInt(Math.floor(fx * sliceW), 0, sliceW - 1);
  const row = clampInt(Math.floor(fy * sliceH), 0, sliceH - 1);
  return { col, row };
}

/**
 * Normalize a pixel position the way the service's prompt sampler does:
 * x = col / (w - 1), so the last column maps to exactly 1.0.
 */
export function normalizePixel(
  col: number,
  row: number,
  sliceW: number,
  sliceH: number,
  sign: 1 | -1,
): Point {
  return {
    x: sliceW > 1 ? col / (sliceW - 1) : 0,
    y: sliceH > 1 ? row / (sliceH - 1) : 0,
    sign,
  };
}

/** Inverse of normalizePixel, for drawing click markers back on the canvas. */
export function denormalize(
  p: { x: number; y: number },
  sliceW: number,
  sliceH: number,
): { col: number; row: number } {
  return {
    col: clampInt(Math.round(p.x * (sliceW - 1)), 0, sliceW - 1),
    row: clampInt(Math.round(p.y * (sliceH - 1)), 0, sliceH - 1),
  };
}

function clampInt(v: number, lo: number, hi: number): number {
  return Math.min(hi, Math.max(lo, v));
}
