// Console entry point: mount views, wire the decision buttons, poll.

import { ApiClient } from "./api.js";
import { Controller, ConsoleState } from "./controller.js";
import {
  renderBanner,
  renderDecisionBar,
  renderParameters,
  renderProfile,
  renderQot,
  renderTimeline,
} from "./views.js";

function el(id: string): HTMLElement {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node;
}

async function resolveRunId(api: ApiClient, explicit: string | null): Promise<string> {
  if (explicit) return explicit;
  const { runs } = await api.listRuns();
  if (!runs.length) throw new Error("no runs on the service; POST /runs first");
  const pending = runs.find((r) => r.pending_decision);
  return (pending ?? runs[runs.length - 1]).run_id;
}

export async function boot(): Promise<void> {
  const params = new URLSearchParams(window.location.search);
  const base = params.get("api") ?? `${window.location.protocol}//${window.location.host}`;
  const api = new ApiClient(base);
  let runId: string;
  try {
    runId = await resolveRunId(api, params.get("run"));
  } catch (err) {
    el("banner").innerHTML = renderBanner(String(err));
    el("banner").querySelector("#btn-retry")?.addEventListener("click", () => void boot());
    return;
  }
  el("run-id").textContent = runId;

  const controller = new Controller(api, runId, (state: ConsoleState) => {
    el("banner").innerHTML = renderBanner(state.connectionError);
    el("banner").querySelector("#btn-retry")?.addEventListener("click", () => void controller.poll());
    el("timeline").innerHTML = renderTimeline(state.timeline, state.run?.state ?? "");
    el("profile").innerHTML = renderProfile(state.profile);
    el("parameters").innerHTML = renderParameters(state.parameters);
    el("qot").innerHTML = renderQot(state.qot);
    el("decision").innerHTML = renderDecisionBar({
      run: state.run,
      countdownS: controller.countdownS(),
      notice: state.notice,
    });
    el("decision")
      .querySelector("#btn-adopt")
      ?.addEventListener("click", () => void controller.decide("adopt"));
    el("decision")
      .querySelector("#btn-revert")
      ?.addEventListener("click", () => void controller.decide("revert"));
  });
  controller.start();
}

if (typeof document !== "undefined" && document.getElementById("timeline")) {
  void boot();
}
