// Shared payload fixtures shaped like real service responses.

import type {
  ParametersPayload,
  ProfilePayload,
  QotPayload,
  RunSummary,
  SweepRow,
  TimelineEntry,
} from "../src/api.js";

export function runSummary(overrides: Partial<RunSummary> = {}): RunSummary {
  return {
    run_id: "abc123",
    state: "AwaitDecision",
    elapsed_min: 53.0,
    pending_decision: true,
    decision: null,
    artifacts: ["params", "sweep_rows"],
    error: null,
    decision_timeout_min: 10,
    wall_seconds_per_min: 1,
    ...overrides,
  };
}

export const timeline: TimelineEntry[] = [
  { state: "DlmSetup", start_min: 0, end_min: 3 },
  { state: "DlmMeasure", start_min: 3, end_min: 4 },
  { state: "DlmCompute", start_min: 4, end_min: 7.5 },
  { state: "CalibSetupMeasure", start_min: 4, end_min: 37 },
  { state: "CalibCompute", start_min: 37, end_min: 52 },
  { state: "Visualize", start_min: 52, end_min: 52 },
  { state: "AwaitDecision", start_min: 52, end_min: 53 },
];

export function profilePayload(): ProfilePayload {
  const z: number[] = [];
  const g: number[] = [];
  for (let i = 0; i <= 400; i++) {
    const zz = i * 0.5;
    z.push(zz);
    g.push(-17 - 0.18 * (zz % 52) - (zz >= 42.6 ? 2.25 : 0));
  }
  return {
    profile: { z_km: z, gamma_p_db: g, resolution_km: 1.0 },
    extract: {
      edfa_positions_km: [17.6, 69.46, 124.21, 178.96],
      spans: [
        {
          span_index: 1,
          z_start_km: 17.6,
          z_end_km: 69.46,
          alpha_dlm_db_km: 0.1792,
          gamma_p_in: 0.0086,
          cd_ps_nm: 932,
          lumped: [
            { z_km: 23.6, loss_db: 3.33, kind: "input_connector" },
            { z_km: 42.6, loss_db: 2.25, kind: "mid_span" },
            { z_km: 63.46, loss_db: 0.93, kind: "output_connector" },
          ],
        },
      ],
    },
  };
}

export function parametersPayload(): ParametersPayload {
  return {
    params: {
      name: "duke_field_trial",
      provenance: "calibrated",
      segment_tags: ["carrier", "carrier"],
      shared_ripple_db: [0.1, -0.1],
      elements: [
        {
          type: "edfa",
          edfa_id: "CL-BST",
          mode: "constant_gain_agc",
          nf_curve: [
            [13, 6.5],
            [16, 5.9],
            [19, 5.55],
          ],
        },
        {
          type: "fiber",
          span_id: "CL1",
          length_km: 51.86,
          alpha_knots: [
            [191.65e12, 0.179],
            [195.55e12, 0.176],
          ],
          dispersion_ps_nm_km: 17.97,
          gamma_w_km: 1.16,
          a_eff_um2: 90.84,
          in_connector_db: 3.33,
          out_connector_db: 0.93,
          lumped_losses: [[25.0, 2.25]],
        },
      ],
    },
    calibration: {
      connectors: { CL1: [3.33, 0.93] },
      nf_curves: { "CL-BST": [[16, 5.9]] },
      osnr_ripple_margin_db: 0.35,
      cost_trace: [
        ["init", 2.97],
        ["polish", 0.2],
      ],
      converged: true,
    },
  };
}

export function qotPayload(): QotPayload {
  const rows: SweepRow[] = [];
  for (let g = 12; g <= 20 + 1e-9; g += 0.5) {
    const row: SweepRow = { booster_gain_db: g };
    for (const ch of [5, 15, 25, 35]) {
      row[`q_meas_ch${ch}_db`] = 0.9 + 0.1 * (g - 12) - 0.005 * (g - 12) ** 2;
      row[`q_cal_ch${ch}_db`] = row[`q_meas_ch${ch}_db`] + 0.02;
      row[`q_base_ch${ch}_db`] = row[`q_meas_ch${ch}_db`] + 0.1;
      row[`dq_cal_ch${ch}_db`] = 0.02;
      row[`dq_base_ch${ch}_db`] = 0.1;
    }
    row.d_osnr_avg_cal_db = 0.02;
    row.d_osnr_avg_base_db = 0.8;
    rows.push(row);
  }
  return { rows, offset_db: 13.7 };
}
