/** Wire types shared with the segmentation service. */

/** One prompt click in normalized slice coordinates, origin at the top-left. */
export interface Point {
  /** Column position in [0, 1]. */
  x: number;
  /** Row position in [0, 1]. */
  y: number;
  /** +1 marks foreground, -1 marks background. */
  sign: 1 | -1;
}

/**
 * Run-length encoded binary mask. Counts alternate zero-run / one-run in
 * row-major order, starting with a zero run (0 if the mask opens with
 * foreground), and must sum to shape[0] * shape[1].
 */
export interface RleMask {
  shape: [number, number];
  counts: number[];
}

export interface VolumeInfo {
  id: string;
  n_slices: number;
  shape: [number, number];
  organs: string[];
  n_chunks: number;
}

export interface SegmentRequest {
  volume: string;
  slice: number;
  points: Point[];
  organ?: string;
}

export interface SegmentResponse {
  mask_rle: RleMask;
  /** Overlap with ground truth; present only when the request named an organ. */
  dsc?: number;
}

export interface AdaptRequest {
  volume: string;
  organ: string;
  chunk: number;
  steps: number;
  alpha: number;
  seed: number;
}

export interface AdaptResponse {
  /** Support loss after every inner update: steps x support-pairs entries. */
  loss_trace: number[];
  dsc_before: number;
  dsc_after: number;
}
