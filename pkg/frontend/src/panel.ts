import type { Client } from "./api.js";
import { ApiError } from "./api.js";
import type { Store } from "./state.js";
import type { AdaptRequest } from "./types.js";
import { describeError } from "./viewer.js";

export interface AdaptFormValues {
  organ: string;
  chunk: number;
  steps: number;
  alpha: number;
  seed: number;
}

/**
 * Drives one adaptation run: snapshots the current mask as the "base" side
 * of the comparison, POSTs /adapt, and publishes the loss trace and
 * before/after DSC. Runs are serialized per session — a second submit while
 * one is in flight is refused locally, and a 409 from the service (another
 * client adapting the same session) disables the panel with a status line.
 */
export class AdaptPanelController {
  /** Non-null while the panel is disabled by a busy-session response. */
  busyStatus: string | null = null;

  constructor(
    private readonly store: Store,
    private readonly client: Client,
    private readonly refreshMask: () => Promise<void>,
  ) {}

  get disabled(): boolean {
    return this.store.state.adapting || this.busyStatus !== null;
  }

  async run(form: AdaptFormValues): Promise<boolean> {
    const { sessionId, volume, mask } = this.store.state;
    if (!sessionId || !volume || this.disabled) return false;
    const req: AdaptRequest = {
      volume: volume.id,
      organ: form.organ,
      chunk: form.chunk,
      steps: form.steps,
      alpha: form.alpha,
      seed: form.seed,
    };
    this.store.set({ adapting: true, baseMask: mask, error: null });
    try {
      const resp = await this.client.adapt(sessionId, req);
      this.store.set({
        adapting: false,
        lossTrace: resp.loss_trace,
        dscBefore: resp.dsc_before,
        dscAfter: resp.dsc_after,
      });
      // model weights changed server-side; redraw the adapted-side overlay
      await this.refreshMask();
      return true;
    } catch (err) {
      if (err instanceof ApiError && err.status === 409) {
        this.busyStatus = `session busy: ${err.message}`;
        this.store.set({ adapting: false });
      } else {
        this.store.set({ adapting: false, error: describeError(err) });
      }
      return false;
    }
  }

  /** Re-enable the panel after a busy-session refusal. */
  clearBusy(): void {
    this.busyStatus = null;
  }
}
