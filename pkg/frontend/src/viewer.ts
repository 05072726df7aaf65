import type { Client } from "./api.js";
import { ApiError } from "./api.js";
import { normalizePixel, pixelFromEvent } from "./coords.js";
import { decodeRle } from "./rle.js";
import type { Sequencer, Store } from "./state.js";
import type { Point } from "./types.js";

/**
 * Click-to-prompt controller for the slice canvas. Owns no pixels itself:
 * it turns mouse events into points, keeps the prompt list in the store,
 * and refreshes the overlay from the service after every change.
 */
export class ViewerController {
  constructor(
    private readonly store: Store,
    private readonly client: Client,
    private readonly seq: Sequencer,
  ) {}

  /**
   * Wire left-click (positive) and right-click (negative) prompts on the
   * given element. The context menu is suppressed so right-click is usable.
   * Slice dimensions come from the currently selected volume at click time.
   */
  attach(canvas: HTMLElement): void {
    canvas.addEventListener("mousedown", (ev) => {
      const mouse = ev as MouseEvent;
      if (mouse.button !== 0 && mouse.button !== 2) return;
      const vol = this.store.state.volume;
      if (!vol) return;
      const [sliceH, sliceW] = vol.shape;
      const rect = canvas.getBoundingClientRect();
      const { col, row } = pixelFromEvent(mouse, rect, sliceW, sliceH);
      const sign = mouse.button === 0 ? 1 : -1;
      void this.addPoint(normalizePixel(col, row, sliceW, sliceH, sign));
    });
    canvas.addEventListener("contextmenu", (ev) => ev.preventDefault());
  }

  /** Append a prompt and request a fresh mask for the new prompt set. */
  async addPoint(p: Point): Promise<void> {
    this.store.set({ points: [...this.store.state.points, p] });
    await this.refreshMask();
  }

  /** Drop all prompts and the overlay without touching the service. */
  clearPoints(): void {
    this.store.set({ points: [], mask: null, maskShape: null, dsc: null });
  }

  /** Change slice: prompts are per-slice, so both they and the mask reset. */
  selectSlice(slice: number): void {
    this.store.set({ slice, points: [], mask: null, maskShape: null, dsc: null });
  }

  /**
   * POST the current prompts to /segment and apply the returned mask unless
   * a newer request was issued while this one was in flight.
   */
  async refreshMask(organ?: string): Promise<void> {
    const { sessionId, volume, slice, points } = this.store.state;
    if (!sessionId || !volume) return;
    if (!points.some((p) => p.sign === 1)) return;
    const ticket = this.seq.next();
    try {
      const resp = await this.client.segment(sessionId, {
        volume: volume.id,
        slice,
        points,
        ...(organ ? { organ } : {}),
      });
      if (!this.seq.accept(ticket)) return;
      this.store.set({
        mask: decodeRle(resp.mask_rle),
        maskShape: resp.mask_rle.shape,
        dsc: resp.dsc ?? null,
        error: null,
      });
    } catch (err) {
      if (!this.seq.accept(ticket)) return;
      // stale overlay would lie about the current prompts, so drop it
      this.store.set({
        mask: null,
        maskShape: null,
        dsc: null,
        error: describeError(err),
      });
    }
  }
}

export function describeError(err: unknown): string {
  if (err instanceof ApiError) return `service error ${err.status}: ${err.message}`;
  if (err instanceof Error) return err.message;
  return String(err);
}
