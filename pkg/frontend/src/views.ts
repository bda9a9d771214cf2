// View renderers: payload in, HTML string out. Charts carry the payload
// values directly; nothing physical is recomputed on the client.

import {
  ParametersPayload,
  ProfilePayload,
  QotPayload,
  RunSummary,
  TimelineEntry,
  FiberElement,
  EdfaElement,
} from "./api.js";
import { Marker, svgChart } from "./charts.js";
import { escapeHtml, fmt, fmtMin } from "./format.js";

const PHASE_ORDER = [
  "DlmSetup",
  "DlmMeasure",
  "DlmCompute",
  "CalibSetupMeasure",
  "CalibCompute",
  "Visualize",
  "AwaitDecision",
  "Commit",
  "Revert",
  "Failed",
];

const SERIES_COLORS = { meas: "#4fc3f7", cal: "#81c784", base: "#ffb74d" };

export function renderTimeline(entries: TimelineEntry[], currentState: string): string {
  if (!entries.length) {
    return `<div class="placeholder">run not started</div>`;
  }
  const total = Math.max(...entries.map((e) => e.end_min), 1);
  const rows = PHASE_ORDER.filter((p) => entries.some((e) => e.state === p))
    .map((phase) => {
      const spans = entries
        .filter((e) => e.state === phase)
        .map((e) => {
          const left = (100 * e.start_min) / total;
          const width = Math.max((100 * (e.end_min - e.start_min)) / total, 0.4);
          const active = phase === currentState ? " active" : "";
          return `<div class="bar${active}" style="left:${left.toFixed(2)}%;width:${width.toFixed(2)}%" title="${phase}: ${fmtMin(e.start_min)} → ${fmtMin(e.end_min)}"></div>`;
        })
        .join("");
      const mins = entries
        .filter((e) => e.state === phase)
        .map((e) => e.end_min - e.start_min)
        .reduce((a, b) => a + b, 0);
      return `<div class="timeline-row" data-phase="${phase}">
        <div class="phase-name">${phase}<span class="phase-min">${fmt(mins, 1)} min</span></div>
        <div class="track">${spans}</div>
      </div>`;
    })
    .join("");
  return `<div class="timeline" data-total-min="${fmt(total, 1)}">${rows}
    <div class="timeline-total">T0 → Tf: ${fmt(total, 1)} simulated minutes</div></div>`;
}

export function renderProfile(payload: ProfilePayload | null): string {
  if (!payload) {
    return `<div class="placeholder">longitudinal profile not measured yet</div>`;
  }
  const { profile, extract } = payload;
  const markers: Marker[] = [];
  let annotations = "";
  if (extract) {
    for (const z of extract.edfa_positions_km) {
      markers.push({ x: z, label: `amp @ ${fmt(z, 1)} km`, color: "#b39ddb" });
    }
    const items: string[] = [];
    for (const span of extract.spans) {
      for (const ev of span.lumped) {
        items.push(
          `<li class="loss-event" data-kind="${ev.kind}">span ${span.span_index}: ${ev.kind.replace("_", " ")} ${fmt(ev.loss_db, 2)} dB @ ${fmt(ev.z_km, 1)} km</li>`,
        );
      }
      items.push(
        `<li class="span-alpha">span ${span.span_index}: α ${fmt(span.alpha_dlm_db_km, 4)} dB/km</li>`,
      );
    }
    annotations = `<ul class="events">${items.join("")}</ul>`;
  }
  const chart = svgChart({
    series: [
      {
        xs: profile.z_km,
        ys: profile.gamma_p_db,
        color: SERIES_COLORS.meas,
        label: "relative power γ(z)P(z)",
      },
    ],
    markers,
    xLabel: "distance [km]",
    yLabel: "γP [dB]",
    height: 260,
  });
  return `<div class="profile-view">${chart}${annotations}</div>`;
}

export function renderParameters(payload: ParametersPayload | null): string {
  if (!payload) {
    return `<div class="placeholder">parameters not computed yet</div>`;
  }
  const spans = payload.params.elements.filter(
    (e): e is FiberElement => e.type === "fiber",
  );
  const edfas = payload.params.elements.filter(
    (e): e is EdfaElement => e.type === "edfa",
  );
  const header = `<tr><th>span</th><th>L [km]</th><th>α̅ [dB/km]</th><th>D [ps/nm/km]</th>
    <th>γ [1/W/km]</th><th>A_eff [µm²]</th><th>l(0) [dB]</th><th>l(L) [dB]</th><th>mid events</th></tr>`;
  const rows = spans
    .map((s) => {
      const alpha = s.alpha_knots.reduce((a, [, v]) => a + v, 0) / s.alpha_knots.length;
      const mids = s.lumped_losses
        .map(([pos, db]) => `${fmt(db, 2)} dB @ ${fmt(pos, 1)} km`)
        .join("; ");
      return `<tr data-span="${escapeHtml(s.span_id)}"><td>${escapeHtml(s.span_id)}</td>
        <td>${fmt(s.length_km, 2)}</td><td>${fmt(alpha, 4)}</td>
        <td>${fmt(s.dispersion_ps_nm_km, 2)}</td><td>${fmt(s.gamma_w_km, 3)}</td>
        <td>${fmt(s.a_eff_um2, 1)}</td><td>${fmt(s.in_connector_db, 2)}</td>
        <td>${fmt(s.out_connector_db, 2)}</td><td>${mids || "–"}</td></tr>`;
    })
    .join("");
  const curves = edfas
    .filter((e) => e.nf_curve.length > 1)
    .map((e) => {
      const xs = e.nf_curve.map(([g]) => g);
      const ys = e.nf_curve.map(([, nf]) => nf);
      const chart = svgChart({
        width: 300,
        height: 150,
        series: [{ xs, ys, color: SERIES_COLORS.cal, label: escapeHtml(e.edfa_id), dots: true }],
        xLabel: "gain [dB]",
        yLabel: "NF [dB]",
      });
      return `<div class="nf-curve" data-edfa="${escapeHtml(e.edfa_id)}">${chart}</div>`;
    })
    .join("");
  const margin = payload.calibration
    ? `<div class="margin">residual OSNR-ripple margin: ${fmt(payload.calibration.osnr_ripple_margin_db, 3)} dB</div>`
    : "";
  return `<div class="params-view">
    <table class="span-table">${header}${rows}</table>
    <div class="nf-curves">${curves}</div>${margin}</div>`;
}

export function channelsOf(payload: QotPayload): number[] {
  const channels = new Set<number>();
  for (const row of payload.rows) {
    for (const key of Object.keys(row)) {
      const m = key.match(/^q_meas_ch(\d+)_db$/);
      if (m) channels.add(Number(m[1]));
    }
  }
  return [...channels].sort((a, b) => a - b);
}

export function renderQot(payload: QotPayload | null): string {
  if (!payload || !payload.rows.length) {
    return `<div class="placeholder">validation sweep not computed yet</div>`;
  }
  const channels = channelsOf(payload);
  const xs = payload.rows.map((r) => r.booster_gain_db);
  const mean = (keyOf: (ch: number) => string) =>
    payload.rows.map((row) => {
      const vals = channels.map((ch) => row[keyOf(ch)]).filter((v) => Number.isFinite(v));
      return vals.reduce((a, b) => a + b, 0) / Math.max(vals.length, 1);
    });
  const qChart = svgChart({
    series: [
      { xs, ys: mean((ch) => `q_meas_ch${ch}_db`), color: SERIES_COLORS.meas, label: "measured", dots: true },
      { xs, ys: mean((ch) => `q_cal_ch${ch}_db`), color: SERIES_COLORS.cal, label: "calibrated model" },
      { xs, ys: mean((ch) => `q_base_ch${ch}_db`), color: SERIES_COLORS.base, label: "baseline model", dash: "5,3" },
    ],
    xLabel: "booster gain [dB]",
    yLabel: "relative Q [dB]",
    height: 240,
  });
  const errChart = svgChart({
    series: [
      { xs, ys: mean((ch) => `dq_cal_ch${ch}_db`), color: SERIES_COLORS.cal, label: "calibrated error", dots: true },
      { xs, ys: mean((ch) => `dq_base_ch${ch}_db`), color: SERIES_COLORS.base, label: "baseline error", dots: true },
    ],
    xLabel: "booster gain [dB]",
    yLabel: "ΔQ [dB]",
    height: 180,
  });
  return `<div class="qot-view" data-channels="${channels.join(",")}">
    ${qChart}<div class="subplot">${errChart}</div></div>`;
}

export interface DecisionViewState {
  run: RunSummary | null;
  countdownS: number | null;
  notice: string | null;
}

export function renderDecisionBar(state: DecisionViewState): string {
  const run = state.run;
  const pending = Boolean(run?.pending_decision);
  const disabled = pending ? "" : " disabled";
  const countdown =
    pending && state.countdownS !== null
      ? `<span class="countdown">auto-revert in ${Math.max(0, Math.round(state.countdownS))}s</span>`
      : "";
  const decided = run?.decision
    ? `<span class="decided">decision: ${escapeHtml(run.decision.decision)} (${escapeHtml(run.decision.decided_by)})</span>`
    : "";
  const notice = state.notice ? `<span class="notice">${escapeHtml(state.notice)}</span>` : "";
  const stateLabel = run ? `<span class="state state-${run.state}">${run.state}</span>` : "";
  return `<div class="decision-bar">
    ${stateLabel}
    <button id="btn-adopt" class="adopt"${disabled}>Adopt</button>
    <button id="btn-revert" class="revert"${disabled}>Revert</button>
    ${countdown}${decided}${notice}
  </div>`;
}

export function renderBanner(message: string | null): string {
  if (!message) return "";
  return `<div class="banner">${escapeHtml(message)} <button id="btn-retry">retry</button></div>`;
}
