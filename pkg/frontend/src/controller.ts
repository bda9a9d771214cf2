// Poll loop and decision flow: one in-flight poll at a time, artifacts
// fetched lazily as the run makes them available.

import {
  ApiClient,
  ParametersPayload,
  ProfilePayload,
  QotPayload,
  RunSummary,
  TimelineEntry,
} from "./api.js";

export interface ConsoleState {
  run: RunSummary | null;
  timeline: TimelineEntry[];
  profile: ProfilePayload | null;
  parameters: ParametersPayload | null;
  qot: QotPayload | null;
  connectionError: string | null;
  notice: string | null;
  awaitingSinceMs: number | null;
}

export class Controller {
  state: ConsoleState = {
    run: null,
    timeline: [],
    profile: null,
    parameters: null,
    qot: null,
    connectionError: null,
    notice: null,
    awaitingSinceMs: null,
  };
  private polling = false;
  private timer: ReturnType<typeof setInterval> | null = null;

  constructor(
    private api: ApiClient,
    private runId: string,
    private onChange: (state: ConsoleState) => void,
    private now: () => number = () => Date.now(),
  ) {}

  start(intervalMs = 2000): void {
    void this.poll();
    this.timer = setInterval(() => void this.poll(), intervalMs);
  }

  stop(): void {
    if (this.timer) clearInterval(this.timer);
    this.timer = null;
  }

  /** Seconds until the decision gate times out, for the countdown display. */
  countdownS(): number | null {
    const run = this.state.run;
    if (!run?.pending_decision || this.state.awaitingSinceMs === null) return null;
    const timeoutMin = run.decision_timeout_min ?? 10;
    const wallPerMin = run.wall_seconds_per_min ?? 1;
    const totalS = timeoutMin * wallPerMin;
    return totalS - (this.now() - this.state.awaitingSinceMs) / 1000;
  }

  async poll(): Promise<void> {
    if (this.polling) return; // one in-flight poll at a time
    this.polling = true;
    try {
      const run = await this.api.getRun(this.runId);
      if (run.pending_decision && this.state.awaitingSinceMs === null) {
        this.state.awaitingSinceMs = this.now();
      }
      if (!run.pending_decision) {
        this.state.awaitingSinceMs = null;
      }
      this.state.run = run;
      this.state.connectionError = null;
      this.state.timeline = (await this.api.getTimeline(this.runId)).timeline;
      if (this.state.profile === null) {
        this.state.profile = await this.api.getProfile(this.runId);
      }
      if (this.state.parameters === null || run.pending_decision) {
        this.state.parameters = await this.api.getParameters(this.runId);
      }
      if (this.state.qot === null || run.pending_decision) {
        this.state.qot = await this.api.getQot(this.runId);
      }
    } catch (err) {
      this.state.connectionError = `service unreachable: ${String(err)}`;
    } finally {
      this.polling = false;
      this.onChange(this.state);
    }
  }

  async decide(decision: "adopt" | "revert"): Promise<void> {
    const res = await this.api.postDecision(this.runId, decision);
    if (res.status === 409) {
      // the run moved on; refresh to show its actual state
      this.state.notice = "decision rejected (state changed); refreshing";
    } else if (!res.ok) {
      this.state.notice = `decision failed with status ${res.status}`;
    } else {
      this.state.notice = null;
    }
    await this.poll();
  }
}
