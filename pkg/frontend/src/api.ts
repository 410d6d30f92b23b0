/**
 * Client for the /v1 generation service: submit a sketch job and poll
 * for progressive per-scale results.
 */

export interface ScaleResult {
  scale: number;
  strd_base64: string;
  preview: number[][][]; // strands x points x xyz
  num_strands: number;
}

export interface JobSnapshot {
  id: string;
  status: string;
  results: ScaleResult[];
  error: string | null;
}

export interface SubmitRequest {
  sketch: string | null; // base64 PNG
  seed: number;
  cfg_scale?: number;
  steps?: number;
  scales_requested?: number;
}

export class ServiceError extends Error {
  constructor(public code: string, message: string) {
    super(message);
  }
}

export class ApiClient {
  constructor(
    private baseUrl: string,
    private fetchImpl: typeof fetch = fetch
  ) {}

  private async json(path: string, init?: RequestInit): Promise<any> {
    const resp = await this.fetchImpl(`${this.baseUrl}${path}`, init);
    const body = await resp.json().catch(() => ({}));
    if (!resp.ok) {
      throw new ServiceError(body.error ?? `http_${resp.status}`, JSON.stringify(body));
    }
    return body;
  }

  async health(): Promise<boolean> {
    try {
      const body = await this.json("/v1/healthz");
      return body.status === "ok";
    } catch {
      return false;
    }
  }

  async models(): Promise<any[]> {
    return (await this.json("/v1/models")).models;
  }

  async submit(request: SubmitRequest): Promise<string> {
    const body = await this.json("/v1/jobs", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(request),
    });
    return body.id;
  }

  async jobState(id: string): Promise<JobSnapshot> {
    return await this.json(`/v1/jobs/${id}`);
  }

  /**
   * Poll until the job finishes; onScale fires once per newly available
   * scale, in order.  Backoff grows gently to keep the service quiet.
   */
  async pollJob(
    id: string,
    onScale: (result: ScaleResult) => void,
    options: { intervalMs?: number; timeoutMs?: number } = {}
  ): Promise<JobSnapshot> {
    const started = Date.now();
    const timeoutMs = options.timeoutMs ?? 300_000;
    let interval = options.intervalMs ?? 150;
    let delivered = 0;
    for (;;) {
      const snap = await this.jobState(id);
      while (delivered < snap.results.length) {
        onScale(snap.results[delivered]);
        delivered++;
      }
      if (snap.status === "done") return snap;
      if (snap.status === "failed") {
        throw new ServiceError("job_failed", snap.error ?? "generation failed");
      }
      if (Date.now() - started > timeoutMs) {
        throw new ServiceError("timeout", `job ${id} timed out`);
      }
      await new Promise((resolve) => setTimeout(resolve, interval));
      interval = Math.min(interval * 1.3, 2000);
    }
  }
}
