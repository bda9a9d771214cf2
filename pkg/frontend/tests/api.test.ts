import { describe, expect, it } from "vitest";

import { ApiClient, ApiError } from "../src/api.js";

function fakeFetch(handler: (url: string, init?: RequestInit) => { status: number; body: unknown }) {
  const calls: { url: string; init?: RequestInit }[] = [];
  const fn = async (url: string, init?: RequestInit): Promise<Response> => {
    calls.push({ url, init });
    const { status, body } = handler(url, init);
    return new Response(JSON.stringify(body), {
      status,
      headers: { "Content-Type": "application/json" },
    });
  };
  return { fn, calls };
}

describe("ApiClient", () => {
  it("builds URLs against the base and parses JSON", async () => {
    const { fn, calls } = fakeFetch(() => ({ status: 200, body: { run_id: "r1", state: "Idle" } }));
    const api = new ApiClient("http://svc:8080/", fn);
    const run = await api.getRun("r1");
    expect(run.run_id).toBe("r1");
    expect(calls[0].url).toBe("http://svc:8080/runs/r1");
  });

  it("treats 409 as not-ready for artifact reads", async () => {
    const { fn } = fakeFetch(() => ({ status: 409, body: { detail: "not yet" } }));
    const api = new ApiClient("http://svc", fn);
    expect(await api.getProfile("r1")).toBeNull();
    expect(await api.getQot("r1")).toBeNull();
    expect(await api.getParameters("r1")).toBeNull();
  });

  it("raises ApiError for other failures", async () => {
    const { fn } = fakeFetch(() => ({ status: 404, body: { detail: "unknown" } }));
    const api = new ApiClient("http://svc", fn);
    await expect(api.getRun("zzz")).rejects.toBeInstanceOf(ApiError);
  });

  it("posts decisions without throwing on conflict", async () => {
    const { fn, calls } = fakeFetch((url, init) =>
      init?.method === "POST" ? { status: 409, body: { detail: "late" } } : { status: 200, body: {} },
    );
    const api = new ApiClient("http://svc", fn);
    const res = await api.postDecision("r1", "adopt");
    expect(res.ok).toBe(false);
    expect(res.status).toBe(409);
    expect(calls[0].url).toBe("http://svc/runs/r1/decision");
    expect(JSON.parse(String(calls[0].init?.body))).toEqual({ decision: "adopt" });
  });
});
