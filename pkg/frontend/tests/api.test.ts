import { describe, expect, it } from "vitest";

import { ApiClient, JobSnapshot, ServiceError } from "../src/api.js";

function fakeService(scales: number) {
  // job progresses one scale per poll
  let polls = 0;
  const fetchImpl = (async (url: RequestInfo | URL, init?: RequestInit) => {
    const path = String(url);
    const reply = (status: number, body: unknown) =>
      new Response(JSON.stringify(body), { status });
    if (path.endsWith("/v1/jobs") && init?.method === "POST") {
      return reply(202, { id: "job-1" });
    }
    if (path.includes("/v1/jobs/job-1")) {
      polls++;
      const ready = Math.min(scales, polls);
      return reply(200, {
        id: "job-1",
        status: ready >= scales ? "done" : `running_scale_${ready + 1}`,
        results: Array.from({ length: ready }, (_, i) => ({
          scale: i + 1,
          strd_base64: "U1RSRA==",
          preview: [[[0, 0, 0], [0, 1, 0]]],
          num_strands: 1,
        })),
        error: null,
      });
    }
    if (path.endsWith("/v1/healthz")) return reply(200, { status: "ok" });
    return reply(404, { error: "unknown_job" });
  }) as typeof fetch;
  return fetchImpl;
}

describe("ApiClient", () => {
  it("delivers scales progressively and in order", async () => {
    const client = new ApiClient("http://svc", fakeService(3));
    const id = await client.submit({ sketch: null, seed: 1 });
    const seen: number[] = [];
    const snap = await client.pollJob(id, (r) => seen.push(r.scale), {
      intervalMs: 1,
    });
    expect(seen).toEqual([1, 2, 3]);
    expect(snap.status).toBe("done");
  });

  it("raises typed errors with the service error code", async () => {
    const failing = (async () =>
      new Response(JSON.stringify({ error: "bad_sketch" }), { status: 400 })) as typeof fetch;
    const client = new ApiClient("http://svc", failing);
    await expect(client.submit({ sketch: "x", seed: 1 })).rejects.toMatchObject({
      code: "bad_sketch",
    });
  });

  it("propagates job failure", async () => {
    const failing = (async (url: RequestInfo | URL, init?: RequestInit) => {
      if (init?.method === "POST")
        return new Response(JSON.stringify({ id: "j" }), { status: 202 });
      return new Response(
        JSON.stringify({ id: "j", status: "failed", results: [], error: "boom" }),
        { status: 200 }
      );
    }) as typeof fetch;
    const client = new ApiClient("http://svc", failing);
    const id = await client.submit({ sketch: null, seed: 1 });
    await expect(client.pollJob(id, () => {}, { intervalMs: 1 })).rejects.toThrow(
      ServiceError
    );
  });

  it("health returns false when unreachable", async () => {
    const down = (async () => {
      throw new Error("connection refused");
    }) as typeof fetch;
    const client = new ApiClient("http://svc", down);
    expect(await client.health()).toBe(false);
  });
});
