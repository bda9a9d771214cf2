// Typed client for the line-twin service. The console mutates nothing except
// POST /runs/{id}/decision; a 409 there means the run moved on and the caller
// should refresh.

export interface RunSummary {
  run_id: string;
  state: string;
  elapsed_min: number;
  pending_decision: boolean;
  decision: { decision: string; decided_by: string; at_min: number } | null;
  artifacts: string[];
  error: string | null;
  decision_timeout_min?: number;
  wall_seconds_per_min?: number;
}

export interface TimelineEntry {
  state: string;
  start_min: number;
  end_min: number;
}

export interface LumpedEvent {
  z_km: number;
  loss_db: number;
  kind: string;
}

export interface SpanExtract {
  span_index: number;
  z_start_km: number;
  z_end_km: number;
  alpha_dlm_db_km: number;
  lumped: LumpedEvent[];
  gamma_p_in: number;
  cd_ps_nm: number;
}

export interface ProfilePayload {
  profile: { z_km: number[]; gamma_p_db: number[]; resolution_km: number };
  extract: { spans: SpanExtract[]; edfa_positions_km: number[] } | null;
}

export interface FiberElement {
  type: "fiber";
  span_id: string;
  length_km: number;
  alpha_knots: [number, number][];
  dispersion_ps_nm_km: number;
  gamma_w_km: number;
  a_eff_um2: number;
  in_connector_db: number;
  out_connector_db: number;
  lumped_losses: [number, number][];
}

export interface EdfaElement {
  type: "edfa";
  edfa_id: string;
  mode: string;
  nf_curve: [number, number][];
}

export interface ParametersPayload {
  params: {
    name: string;
    provenance: string;
    elements: (FiberElement | EdfaElement)[];
    segment_tags: string[];
    shared_ripple_db: number[];
  };
  calibration: {
    connectors: Record<string, [number, number]>;
    nf_curves: Record<string, [number, number][]>;
    osnr_ripple_margin_db: number;
    cost_trace: [string, number][];
    converged: boolean;
  } | null;
}

export type SweepRow = Record<string, number>;

export interface QotPayload {
  rows: SweepRow[];
  offset_db: number;
}

export interface DecisionResult {
  ok: boolean;
  status: number;
  body: unknown;
}

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message);
  }
}

export class ApiClient {
  constructor(
    public baseUrl: string,
    private fetchFn: FetchLike = (...args) => fetch(...args),
  ) {
    this.baseUrl = baseUrl.replace(/\/+$/, "");
  }

  private async getJson<T>(path: string): Promise<T> {
    const res = await this.fetchFn(`${this.baseUrl}${path}`);
    if (!res.ok) {
      throw new ApiError(res.status, `GET ${path} -> ${res.status}`);
    }
    return (await res.json()) as T;
  }

  /** GET that treats 409 (artifact not ready yet) as "no data". */
  private async getJsonIfReady<T>(path: string): Promise<T | null> {
    try {
      return await this.getJson<T>(path);
    } catch (err) {
      if (err instanceof ApiError && err.status === 409) return null;
      throw err;
    }
  }

  listRuns(): Promise<{ runs: RunSummary[] }> {
    return this.getJson("/runs");
  }

  getRun(runId: string): Promise<RunSummary> {
    return this.getJson(`/runs/${runId}`);
  }

  getTimeline(runId: string): Promise<{ timeline: TimelineEntry[] }> {
    return this.getJson(`/runs/${runId}/timeline`);
  }

  getProfile(runId: string): Promise<ProfilePayload | null> {
    return this.getJsonIfReady(`/runs/${runId}/profile`);
  }

  getParameters(runId: string): Promise<ParametersPayload | null> {
    return this.getJsonIfReady(`/runs/${runId}/parameters`);
  }

  getQot(runId: string): Promise<QotPayload | null> {
    return this.getJsonIfReady(`/runs/${runId}/qot`);
  }

  async postDecision(runId: string, decision: "adopt" | "revert"): Promise<DecisionResult> {
    const res = await this.fetchFn(`${this.baseUrl}/runs/${runId}/decision`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ decision }),
    });
    let body: unknown = null;
    try {
      body = await res.json();
    } catch {
      body = null;
    }
    return { ok: res.ok, status: res.status, body };
  }
}
