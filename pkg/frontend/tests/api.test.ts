import { describe, expect, it, vi } from "vitest";
import { ApiError, Client } from "../src/api.js";

function jsonResponse(body: unknown, status = 200): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "Content-Type": "application/json" },
  });
}

describe("Client", () => {
  it("GETs /volumes and returns the parsed listing", async () => {
    const fetchFn = vi.fn().mockResolvedValue(
      jsonResponse([{ id: "v", n_slices: 8, shape: [16, 16], organs: [], n_chunks: 4 }]),
    );
    const vols = await new Client("http://svc", fetchFn).volumes();
    expect(fetchFn).toHaveBeenCalledWith("http://svc/volumes", { method: "GET" });
    expect(vols[0].id).toBe("v");
  });

  it("POSTs /sessions and unwraps the session id", async () => {
    const fetchFn = vi.fn().mockResolvedValue(jsonResponse({ session_id: "s-1" }));
    const sid = await new Client("", fetchFn).openSession("model.ckpt");
    expect(sid).toBe("s-1");
    const [url, init] = fetchFn.mock.calls[0];
    expect(url).toBe("/sessions");
    expect(init.method).toBe("POST");
    expect(JSON.parse(init.body)).toEqual({ checkpoint: "model.ckpt" });
    expect(init.headers["Content-Type"]).toBe("application/json");
  });

  it("POSTs segment requests with the exact point payload", async () => {
    const fetchFn = vi.fn().mockResolvedValue(
      jsonResponse({ mask_rle: { shape: [2, 2], counts: [4] } }),
    );
    const req = {
      volume: "v",
      slice: 3,
      points: [{ x: 0.5, y: 0.25, sign: 1 as const }],
    };
    await new Client("", fetchFn).segment("s/1", req);
    const [url, init] = fetchFn.mock.calls[0];
    expect(url).toBe("/sessions/s%2F1/segment");
    expect(JSON.parse(init.body)).toEqual(req);
  });

  it("DELETEs sessions", async () => {
    const fetchFn = vi.fn().mockResolvedValue(jsonResponse({ closed: true }));
    await new Client("", fetchFn).closeSession("abc");
    expect(fetchFn).toHaveBeenCalledWith("/sessions/abc", { method: "DELETE" });
  });

  it("builds slice PNG urls", () => {
    const c = new Client("http://svc");
    expect(c.sliceUrl("vol-1", 7)).toBe("http://svc/volumes/vol-1/slices/7.png");
  });

  it("raises ApiError carrying status and service detail", async () => {
    const fetchFn = vi.fn().mockResolvedValue(
      jsonResponse({ detail: "unknown volume 'ghost'" }, 404),
    );
    const err = await new Client("", fetchFn)
      .volumes()
      .then(() => null, (e: unknown) => e);
    expect(err).toBeInstanceOf(ApiError);
    expect((err as ApiError).status).toBe(404);
    expect((err as ApiError).message).toBe("unknown volume 'ghost'");
  });

  it("falls back to the status code when the error body is not JSON", async () => {
    const fetchFn = vi.fn().mockResolvedValue(new Response("boom", { status: 500 }));
    const err = await new Client("", fetchFn)
      .health()
      .then(() => null, (e: unknown) => e);
    expect((err as ApiError).message).toBe("HTTP 500");
  });
});
