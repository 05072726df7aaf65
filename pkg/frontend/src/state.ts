import type { Point, VolumeInfo } from "./types.js";

/** Everything the UI renders; mutated only through Store methods. */
export interface UiSessionState {
  volumes: VolumeInfo[];
  volume: VolumeInfo | null;
  slice: number;
  points: Point[];
  /** Decoded row-major mask for the current slice, null when cleared. */
  mask: Uint8Array | null;
  maskShape: [number, number] | null;
  dsc: number | null;
  /** Mask from the pre-adaptation model, for side-by-side comparison. */
  baseMask: Uint8Array | null;
  sessionId: string | null;
  adapting: boolean;
  lossTrace: number[];
  dscBefore: number | null;
  dscAfter: number | null;
  error: string | null;
}

export function initialState(): UiSessionState {
  return {
    volumes: [],
    volume: null,
    slice: 0,
    points: [],
    mask: null,
    maskShape: null,
    dsc: null,
    baseMask: null,
    sessionId: null,
    adapting: false,
    lossTrace: [],
    dscBefore: null,
    dscAfter: null,
    error: null,
  };
}

type Listener = (s: UiSessionState) => void;

/** Minimal observable store: set() merges a patch and notifies listeners. */
export class Store {
  private listeners: Listener[] = [];
  constructor(public state: UiSessionState = initialState()) {}

  subscribe(fn: Listener): () => void {
    this.listeners.push(fn);
    return () => {
      this.listeners = this.listeners.filter((l) => l !== fn);
    };
  }

  set(patch: Partial<UiSessionState>): void {
    this.state = { ...this.state, ...patch };
    for (const fn of this.listeners) fn(this.state);
  }
}

/**
 * Monotone ticket counter for in-flight segment requests. A response is
 * applied only if no newer request was issued meanwhile, so a slow reply to
 * a superseded click can never overwrite the latest overlay.
 */
export class Sequencer {
  private issued = 0;
  private applied = 0;

  next(): number {
    return ++this.issued;
  }

  /** True (and records the application) iff `ticket` is still the newest. */
  accept(ticket: number): boolean {
    if (ticket < this.issued || ticket <= this.applied) return false;
    this.applied = ticket;
    return true;
  }
}
