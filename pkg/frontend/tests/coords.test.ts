import { describe, expect, it } from "vitest";
import { denormalize, normalizePixel, pixelFromEvent } from "../src/coords.js";

const rect = (w: number, h: number) => ({ left: 0, top: 0, width: w, height: h });

describe("pixelFromEvent", () => {
  it("maps a center click on a w x w canvas to within 1/w of (0.5, 0.5)", () => {
    for (const w of [16, 17, 64]) {
      const { col, row } = pixelFromEvent(
        { clientX: w / 2, clientY: w / 2 },
        rect(w, w),
        w,
        w,
      );
      const p = normalizePixel(col, row, w, w, 1);
      expect(Math.abs(p.x - 0.5)).toBeLessThanOrEqual(1 / w);
      expect(Math.abs(p.y - 0.5)).toBeLessThanOrEqual(1 / w);
    }
  });

  it("accounts for CSS scaling of the canvas", () => {
    // 16px slice displayed at 128px: a click at display x=40 sits in column 5
    const { col, row } = pixelFromEvent(
      { clientX: 40, clientY: 100 },
      rect(128, 128),
      16,
      16,
    );
    expect(col).toBe(5);
    expect(row).toBe(12);
  });

  it("clamps clicks on the far edge into the last pixel", () => {
    const { col, row } = pixelFromEvent(
      { clientX: 16, clientY: 16 },
      rect(16, 16),
      16,
      16,
    );
    expect(col).toBe(15);
    expect(row).toBe(15);
  });

  it("respects a rect offset from the page origin", () => {
    const { col, row } = pixelFromEvent(
      { clientX: 100.5, clientY: 207.5 },
      { left: 100, top: 200, width: 16, height: 16 },
      16,
      16,
    );
    expect(col).toBe(0);
    expect(row).toBe(7);
  });
});

describe("normalizePixel / denormalize round trip", () => {
  it("recovers every pixel of a 16x16 slice exactly", () => {
    for (let row = 0; row < 16; row++) {
      for (let col = 0; col < 16; col++) {
        const p = normalizePixel(col, row, 16, 16, 1);
        expect(p.x).toBeGreaterThanOrEqual(0);
        expect(p.x).toBeLessThanOrEqual(1);
        const back = denormalize(p, 16, 16);
        expect(back).toEqual({ col, row });
      }
    }
  });

  it("stays within one pixel through a click -> payload -> redraw cycle", () => {
    const w = 37;
    for (let px = 0; px < w; px++) {
      const { col } = pixelFromEvent(
        { clientX: px + 0.5, clientY: 0 },
        rect(w, w),
        w,
        w,
      );
      const p = normalizePixel(col, 0, w, w, 1);
      const back = denormalize(p, w, w);
      expect(Math.abs(back.col - px)).toBeLessThanOrEqual(1);
    }
  });

  it("degenerates safely for 1-pixel slices", () => {
    expect(normalizePixel(0, 0, 1, 1, -1)).toEqual({ x: 0, y: 0, sign: -1 });
  });
});
