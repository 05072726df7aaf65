import type {
  AdaptRequest,
  AdaptResponse,
  SegmentRequest,
  SegmentResponse,
  VolumeInfo,
} from "./types.js";

/** HTTP failure carrying the status code and the service's detail message. */
export class ApiError extends Error {
  constructor(
    public readonly status: number,
    detail: string,
  ) {
    super(detail);
    this.name = "ApiError";
  }
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

/**
 * Thin typed client for the segmentation service. All model math stays on
 * the server; this only shapes requests and decodes JSON.
 */
export class Client {
  constructor(
    private readonly base: string = "",
    private readonly fetchFn: FetchLike = (input, init) => fetch(input, init),
  ) {}

  async health(): Promise<{ status: string }> {
    return this.request("GET", "/health");
  }

  async volumes(): Promise<VolumeInfo[]> {
    return this.request("GET", "/volumes");
  }

  /** URL of the grayscale PNG for one slice, for use as an image source. */
  sliceUrl(volumeId: string, slice: number): string {
    return `${this.base}/volumes/${encodeURIComponent(volumeId)}/slices/${slice}.png`;
  }

  async openSession(checkpoint: string): Promise<string> {
    const body = await this.request<{ session_id: string }>(
      "POST",
      "/sessions",
      { checkpoint },
    );
    return body.session_id;
  }

  async closeSession(sessionId: string): Promise<void> {
    await this.request("DELETE", `/sessions/${encodeURIComponent(sessionId)}`);
  }

  async segment(
    sessionId: string,
    req: SegmentRequest,
  ): Promise<SegmentResponse> {
    return this.request(
      "POST",
      `/sessions/${encodeURIComponent(sessionId)}/segment`,
      req,
    );
  }

  async adapt(sessionId: string, req: AdaptRequest): Promise<AdaptResponse> {
    return this.request(
      "POST",
      `/sessions/${encodeURIComponent(sessionId)}/adapt`,
      req,
    );
  }

  private async request<T>(
    method: string,
    path: string,
    body?: unknown,
  ): Promise<T> {
    const init: RequestInit = { method };
    if (body !== undefined) {
      init.headers = { "Content-Type": "application/json" };
      init.body = JSON.stringify(body);
    }
    const resp = await this.fetchFn(this.base + path, init);
    if (!resp.ok) {
      throw new ApiError(resp.status, await extractDetail(resp));
    }
    return (await resp.json()) as T;
  }
}

async function extractDetail(resp: Response): Promise<string> {
  try {
    const body = (await resp.json()) as { detail?: unknown };
    if (typeof body.detail === "string") return body.detail;
    return JSON.stringify(body);
  } catch {
    return `HTTP ${resp.status}`;
  }
}
