import { describe, expect, it, vi } from "vitest";

import { ApiError, Client } from "../src/api.js";

function mockFetch(handler: (url: string, init?: RequestInit) =>
    { status: number; body: string | ArrayBuffer; type?: string }) {
  return vi.fn(async (url: RequestInfo | URL, init?: RequestInit) => {
    const out = handler(String(url), init);
    const body = out.body;
    return {
      ok: out.status >= 200 && out.status < 300,
      status: out.status,
      json: async () => JSON.parse(body as string),
      text: async () => (typeof body === "string" ? body : ""),
      arrayBuffer: async () =>
        typeof body === "string" ? new TextEncoder().encode(body).buffer
                                 : body,
    } as unknown as Response;
  }) as unknown as typeof fetch;
}

describe("api client", () => {
  it("routes each call to its documented endpoint", async () => {
    const seen: string[] = [];
    const f = mockFetch((url, init) => {
      seen.push(`${init?.method ?? "GET"} ${new URL(url).pathname}` +
                (new URL(url).search || ""));
      return { status: 200, body: JSON.stringify({ ok: true, strands: [],
                                                   polyline: [] }) };
    });
    const c = new Client("http://h", f);
    await c.scene();
    await c.editHaircut(0.5);
    await c.editWind({ direction: [1, 0, 0], amplitude: 0.01, phase: 0 });
    await c.strands(4);
    await c.latent([0.5, 0.5], 1, 0.2);
    await c.render({ index: 0 });
    expect(seen).toEqual([
      "GET /scene",
      "POST /edit/haircut",
      "POST /edit/wind",
      "GET /strands?decimate=4",
      "POST /latent",
      "POST /render",
    ]);
  });

  it("raises ApiError with the server message", async () => {
    const f = mockFetch(() => ({
      status: 400, body: JSON.stringify({ error: "fraction outside" }),
    }));
    const c = new Client("http://h", f);
    await expect(c.editHaircut(2)).rejects.toThrowError(ApiError);
    await expect(c.editHaircut(2)).rejects.toThrow("fraction outside");
  });

  it("render returns raw bytes", async () => {
    const bytes = new Uint8Array([137, 80, 78, 71]).buffer;
    const f = mockFetch(() => ({ status: 200, body: bytes }));
    const c = new Client("http://h", f);
    const out = await c.render({ orbit: { azimuth: 0, elevation: 0,
                                          distance: 0.5 } });
    expect(new Uint8Array(out)[1]).toBe(80);
  });
});
