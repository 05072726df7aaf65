import type { RleMask } from "./types.js";

/**
 * Expand a run-length encoded mask into a flat row-major 0/1 array.
 *
 * The encoding alternates zero-run, one-run, zero-run, ... and always opens
 * with a zero run, so a mask that starts with foreground carries a leading 0
 * count. Rejects payloads whose counts are negative or do not cover the
 * stated shape exactly.
 */
export function decodeRle(rle: RleMask): Uint8Array {
  const [h, w] = rle.shape;
  if (!Number.isInteger(h) || !Number.isInteger(w) || h <= 0 || w <= 0) {
    throw new Error(`bad mask shape [${rle.shape}]`);
  }
  const total = h * w;
  const out = new Uint8Array(total);
  let pos = 0;
  let value = 0;
  for (const run of rle.counts) {
    if (!Number.isInteger(run) || run < 0) {
      throw new Error(`bad run length ${run}`);
    }
    if (pos + run > total) {
      throw new Error(`runs cover ${pos + run} pixels, mask has ${total}`);
    }
    if (value === 1) {
      out.fill(1, pos, pos + run);
    }
    pos += run;
    value = 1 - value;
  }
  if (pos !== total) {
    throw new Error(`runs cover ${pos} pixels, mask has ${total}`);
  }
  return out;
}

/**
 * Paint a decoded mask into an RGBA buffer suitable for ImageData: foreground
 * pixels get the given color, background stays fully transparent.
 */
export function maskToRgba(
  mask: Uint8Array,
  color: [number, number, number, number] = [255, 80, 80, 140],
): Uint8ClampedArray<ArrayBuffer> {
  const rgba = new Uint8ClampedArray(mask.length * 4);
  for (let i = 0; i < mask.length; i++) {
    if (mask[i]) {
      rgba.set(color, i * 4);
    }
  }
  return rgba;
}

/** Fraction of foreground pixels, handy for sanity display in the UI. */
export function foregroundFraction(mask: Uint8Array): number {
  let on = 0;
  for (let i = 0; i < mask.length; i++) on += mask[i];
  return mask.length ? on / mask.length : 0;
}
