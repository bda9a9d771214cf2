"""Line calibration against telemetry sweeps ("data set 2").

Fits per-span attenuation (band mean + spectral shape), connector losses,
per-amplifier NF-vs-gain curves and the line-shared gain ripple by driving
the measured-vs-simulated error to zero over a gain/tilt measurement sweep,
then merges the result with the longitudinal-profile extraction into one
calibrated parameter set.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import minimize

from .dlm import DlmExtract, separate_gamma_power
from .elements import AAL_NF_DB, EdfaModel, FiberSpan, aeff_from_gamma
from .gn import ParameterSet
from .plant import (
    CombSource,
    NoiseSpec,
    OpticalLinePlant,
    TelemetryRecord,
    measure,
)
from .propagation import EdfaSetting, propagate
from .spectral import (
    FrequencyGrid,
    GridMismatchError,
    SpectralProfile,
    db_to_linear,
    linear_to_db,
)

BASELINE_IN_CONNECTOR_DB = 1.5
BASELINE_OUT_CONNECTOR_DB = 0.5
BASELINE_DISPERSION_PS_NM_KM = 16.7
BASELINE_GAMMA_W_KM = 1.3
BASELINE_NF_DB = 7.0


class IdentifiabilityError(RuntimeError):
    """The dataset does not constrain a parameter the fit needs."""


class MergeError(ValueError):
    """Extraction and calibration results do not cover the same line."""


@dataclass
class CalibrationDataset:
    """Measurement sweep: one record per gain/tilt configuration."""

    records: list  # of TelemetryRecord
    comb: CombSource
    grid: FrequencyGrid

    def __post_init__(self):
        if not self.records:
            raise ValueError("dataset has no records")

    def observed_gains(self) -> dict:
        """Distinct commanded gains per amplifier across the sweep."""
        gains: dict = {}
        for rec in self.records:
            for eid, s in rec.settings.items():
                if s.gain_db is not None:
                    gains.setdefault(eid, set()).add(round(float(s.gain_db), 6))
        return {k: sorted(v) for k, v in gains.items()}


@dataclass
class CalibResult:
    """Fitted parameters plus per-record accuracy bookkeeping."""

    params: ParameterSet
    connectors: dict  # span_id -> (in_db, out_db)
    nf_curves: dict  # edfa_id -> [(gain, nf)]
    shared_ripple: SpectralProfile
    osnr_ripple_correction: SpectralProfile
    osnr_ripple_margin_db: float
    fit_report: list
    cost_trace: list
    converged: bool = True
    cancelled: bool = False
    notes: list = field(default_factory=list)

    def to_dict(self):
        return {
            "connectors": {k: list(v) for k, v in self.connectors.items()},
            "nf_curves": {k: [list(p) for p in v] for k, v in self.nf_curves.items()},
            "shared_ripple_db": self.shared_ripple.values.tolist(),
            "osnr_ripple_correction_db": self.osnr_ripple_correction.values.tolist(),
            "osnr_ripple_margin_db": self.osnr_ripple_margin_db,
            "fit_report": self.fit_report,
            "cost_trace": self.cost_trace,
            "converged": self.converged,
            "cancelled": self.cancelled,
            "notes": self.notes,
        }


def fit_report_csv(result: "CalibResult", sep: str = ",") -> str:
    """Per-record error table in delimiter-separated text."""
    cols = [
        "record",
        "d_psig_avg_db",
        "d_psig_ripple_mean_abs_db",
        "d_osnr_avg_db",
        "d_osnr_ripple_mean_abs_db",
    ]
    lines = [sep.join(cols)]
    for i, row in enumerate(result.fit_report):
        lines.append(sep.join([str(i)] + [f"{row[c]:.6f}" for c in cols[1:]]))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Dataset generation


def make_sweep_plan(
    edfa_ids: list,
    base_gains: dict,
    n_records: int = 58,
    ladder_span_db: float = 3.0,
    seed: int = 11,
) -> list:
    """Structured gain/tilt grid: per-amplifier ladders, tilt probes, then
    seeded joint perturbations up to ``n_records`` entries."""
    plans = []

    def base_settings():
        return {eid: EdfaSetting(gain_db=base_gains[eid], tilt_db=0.0) for eid in edfa_ids}

    # Interleave the per-amplifier gain ladders so truncated plans still
    # visit at least two gains per amplifier.
    for dg in np.linspace(-ladder_span_db, ladder_span_db, 7):
        for eid in edfa_ids:
            s = base_settings()
            s[eid] = replace(s[eid], gain_db=base_gains[eid] + float(dg))
            plans.append(s)
    for eid in edfa_ids:
        for tilt in (-1.0, 1.0):
            s = base_settings()
            s[eid] = replace(s[eid], tilt_db=tilt)
            plans.append(s)
    rng = np.random.default_rng(seed)
    while len(plans) < n_records:
        s = {}
        for eid in edfa_ids:
            s[eid] = EdfaSetting(
                gain_db=base_gains[eid] + float(rng.uniform(-2.0, 2.0)),
                tilt_db=float(rng.uniform(-1.0, 1.0)),
            )
        plans.append(s)
    return plans[:n_records]


def collect_dataset(
    plant: OpticalLinePlant,
    comb: CombSource,
    plan: list,
    noise: NoiseSpec | None = None,
) -> CalibrationDataset:
    """Run the measurement sweep against a (real or simulated) line."""
    records = [
        measure(plant, comb, settings, noise=noise, record_index=i, scope="carrier")
        for i, settings in enumerate(plan)
    ]
    return CalibrationDataset(records=records, comb=comb, grid=plant.grid)


# ---------------------------------------------------------------------------
# Cost function


def _record_errors(rec: TelemetryRecord, sim: TelemetryRecord, hole_slots) -> dict:
    """Average/ripple error decomposition for one record (measured - simulated)."""
    n = rec.rx_spectrum.grid.n_channels
    sig_mask = np.ones(n, dtype=bool)
    sig_mask[list(hole_slots)] = False

    d_sig = rec.rx_spectrum.values - sim.rx_spectrum.values
    d_sig = d_sig[sig_mask]
    d_sig_avg = float(np.mean(d_sig))
    d_sig_rip = d_sig - d_sig_avg

    meas_osnr = rec.rx_osnr.values
    sim_osnr = sim.rx_osnr.values
    valid = np.isfinite(meas_osnr) & np.isfinite(sim_osnr)
    d_osnr = meas_osnr[valid] - sim_osnr[valid]
    d_osnr_avg = float(np.mean(d_osnr))
    d_osnr_rip = d_osnr - d_osnr_avg
    return {
        "d_psig_avg_db": d_sig_avg,
        "d_psig_ripple_mean_abs_db": float(np.mean(np.abs(d_sig_rip))),
        "d_osnr_avg_db": d_osnr_avg,
        "d_osnr_ripple_mean_abs_db": float(np.mean(np.abs(d_osnr_rip))),
        "_osnr_ripple_residual": (valid, d_osnr_rip),
        "_sig_residual": (sig_mask, d_sig),
    }


def simulate_record(
    params: ParameterSet, comb: CombSource, settings: dict, scope: str = "carrier"
) -> TelemetryRecord:
    """Noise-free model prediction through the same measurement operator."""
    return measure(params.as_line(), comb, settings, noise=NoiseSpec.zero(), scope=scope)


def cost(
    params: ParameterSet,
    dataset: CalibrationDataset,
    w_p: float = 1.0,
    w_o: float = 1.0,
    detail: bool = False,
):
    """Mean over records of the weighted average+ripple error magnitudes."""
    if params.grid != dataset.grid:
        raise GridMismatchError("parameter set and dataset use different grids")
    per_record = []
    total = 0.0
    for rec in dataset.records:
        sim = simulate_record(params, dataset.comb, rec.settings)
        err = _record_errors(rec, sim, dataset.comb.blocked_slots)
        total += w_p * (abs(err["d_psig_avg_db"]) + err["d_psig_ripple_mean_abs_db"])
        total += w_o * (abs(err["d_osnr_avg_db"]) + err["d_osnr_ripple_mean_abs_db"])
        per_record.append(err)
    value = total / len(dataset.records)
    if detail:
        return value, per_record
    return value


# ---------------------------------------------------------------------------
# Baseline construction


def line_inventory(plant: OpticalLinePlant) -> ParameterSet:
    """Device-inventory skeleton of a line: structure and ratings only.

    Copies element ids, order, segment tags, span lengths, pads, power
    ratings, modes and setpoints; every physical estimate (attenuation,
    connectors, NF, ripple, dispersion, nonlinearity) is reset to neutral
    placeholders so nothing estimated leaks from the true plant.
    """
    elements = []
    for el in plant.elements:
        if isinstance(el, FiberSpan):
            elements.append(
                FiberSpan(
                    span_id=el.span_id,
                    length_km=el.length_km,
                    alpha_knots=[(plant.grid.f_mid, 0.2)],
                    dispersion_ps_nm_km=BASELINE_DISPERSION_PS_NM_KM,
                    gamma_w_km=BASELINE_GAMMA_W_KM,
                    a_eff_um2=aeff_from_gamma(BASELINE_GAMMA_W_KM),
                    in_connector_db=BASELINE_IN_CONNECTOR_DB,
                    out_connector_db=BASELINE_OUT_CONNECTOR_DB,
                    connector_standoff_km=el.connector_standoff_km,
                )
            )
        else:
            elements.append(
                EdfaModel(
                    edfa_id=el.edfa_id,
                    mode=el.mode,
                    target_gain_db=el.target_gain_db,
                    tilt_db=0.0,
                    setpoint_power_dbm=el.setpoint_power_dbm,
                    nf_curve=[(5.0, BASELINE_NF_DB), (25.0, BASELINE_NF_DB)],
                    ripple_scale=1.0,
                    max_output_power_dbm=el.max_output_power_dbm,
                    output_pad_db=el.output_pad_db,
                )
            )
    return ParameterSet(
        name=plant.name,
        grid=plant.grid,
        elements=elements,
        segment_tags=list(plant.segment_tags),
        shared_ripple_db=np.zeros(plant.grid.n_channels),
        provenance="baseline",
    )


def build_baseline(
    inventory: ParameterSet,
    photodiode_totals: dict,
    tx_total_dbm: float | None = None,
    rx_total_dbm: float | None = None,
) -> ParameterSet:
    """Assumed-standard-fiber parameter set from photodiode span totals.

    ``photodiode_totals`` maps edfa_id -> (pin_dbm, pout_dbm) from one
    transparency-configuration measurement; edge spans use the transmit /
    receive edge totals instead. Connectors are fixed at 1.5 / 0.5 dB, the
    flat attenuation is the measured span total purged by those assumed
    connectors, dispersion and nonlinearity take standard values and NF is
    flat 7 dB.
    """
    params = copy.deepcopy(inventory)
    params.provenance = "baseline"
    elements = params.elements
    for i, el in enumerate(elements):
        if not isinstance(el, FiberSpan):
            continue
        if el.length_km <= 0:
            raise ValueError(f"span {el.span_id}: zero-length span")
        upstream = next(
            (e for e in reversed(elements[:i]) if isinstance(e, EdfaModel)), None
        )
        downstream = next(
            (e for e in elements[i + 1 :] if isinstance(e, EdfaModel)), None
        )
        if upstream is not None:
            p_launch = photodiode_totals[upstream.edfa_id][1] - upstream.output_pad_db
        elif tx_total_dbm is not None:
            p_launch = tx_total_dbm
        else:
            raise ValueError(f"span {el.span_id}: no upstream power reference")
        if downstream is not None:
            p_arrive = photodiode_totals[downstream.edfa_id][0]
        elif rx_total_dbm is not None:
            p_arrive = rx_total_dbm
        else:
            raise ValueError(f"span {el.span_id}: no downstream power reference")
        total_loss = p_launch - p_arrive
        assumed = BASELINE_IN_CONNECTOR_DB + BASELINE_OUT_CONNECTOR_DB
        alpha = (total_loss - assumed) / el.length_km
        if alpha <= 0:
            raise ValueError(
                f"span {el.span_id}: inferred attenuation {alpha:.4f} dB/km not positive"
            )
        el.alpha_knots = [(params.grid.f_mid, float(alpha))]
        el.in_connector_db = BASELINE_IN_CONNECTOR_DB
        el.out_connector_db = BASELINE_OUT_CONNECTOR_DB
        el.lumped_losses = []
        el.dispersion_ps_nm_km = BASELINE_DISPERSION_PS_NM_KM
        el.gamma_w_km = BASELINE_GAMMA_W_KM
        el.a_eff_um2 = aeff_from_gamma(BASELINE_GAMMA_W_KM)
    for el in elements:
        if isinstance(el, EdfaModel):
            el.nf_curve = [(5.0, BASELINE_NF_DB), (25.0, BASELINE_NF_DB)]
            el.ripple_scale = 1.0
    params.shared_ripple_db = np.zeros(params.grid.n_channels)
    return params


# ---------------------------------------------------------------------------
# Staged calibration


def _carrier_layout(params: ParameterSet):
    """Ordered carrier elements with their indices in the full chain."""
    tags = params.segment_tags
    idx = [i for i, t in enumerate(tags) if t == "carrier"]
    sl = slice(idx[0], idx[-1] + 1)
    elements = params.elements[sl]
    spans = [(i + sl.start, e) for i, e in enumerate(elements) if isinstance(e, FiberSpan)]
    edfas = [(i + sl.start, e) for i, e in enumerate(elements) if isinstance(e, EdfaModel)]
    return sl, spans, edfas


def _span_extract_map(params: ParameterSet, extract: DlmExtract) -> dict:
    """Map full-chain span index -> SpanExtract, matched by order/length."""
    all_spans = [e for e in params.elements if isinstance(e, FiberSpan)]
    if len(extract.spans) != len(all_spans):
        raise MergeError(
            f"extraction covers {len(extract.spans)} spans, line has {len(all_spans)}"
        )
    out = {}
    order = 0
    for i, el in enumerate(params.elements):
        if isinstance(el, FiberSpan):
            sp = extract.spans[order]
            if abs(sp.length_km - el.length_km) > 2.0:
                raise MergeError(
                    f"span {el.span_id}: length {el.length_km} km vs extracted "
                    f"{sp.length_km:.2f} km"
                )
            out[i] = sp
            order += 1
    return out


def _extract_edge_losses(sp) -> tuple:
    l_in = sum(e.loss_db for e in sp.lumped if e.kind == "input_connector")
    l_out = sum(e.loss_db for e in sp.lumped if e.kind == "output_connector")
    mids = [
        (e.z_km - sp.z_start_km, e.loss_db) for e in sp.lumped if e.kind == "mid_span"
    ]
    return l_in, l_out, mids


def _stage1_losses(params: ParameterSet, dataset: CalibrationDataset, ex_map: dict):
    """Connector/lumped losses and band-mean attenuation per carrier span."""
    elements = params.elements
    for i, el in enumerate(elements):
        if not isinstance(el, FiberSpan) or params.segment_tags[i] != "carrier":
            continue
        upstream = next(e for e in reversed(elements[:i]) if isinstance(e, EdfaModel))
        downstream = next(e for e in elements[i + 1 :] if isinstance(e, EdfaModel))
        totals = []
        for rec in dataset.records:
            if upstream.edfa_id in rec.edfa_pout_dbm and downstream.edfa_id in rec.edfa_pin_dbm:
                totals.append(
                    rec.edfa_pout_dbm[upstream.edfa_id]
                    - upstream.output_pad_db
                    - rec.edfa_pin_dbm[downstream.edfa_id]
                )
        if not totals:
            raise IdentifiabilityError(
                f"span {el.span_id}: no photodiode pair brackets the span"
            )
        total_loss = float(np.mean(totals))
        sp = ex_map[i]
        l_in, l_out, mids = _extract_edge_losses(sp)
        lumped_sum = sum(db for _, db in mids)
        alpha_mean = (total_loss - l_in - l_out - lumped_sum) / el.length_km
        if alpha_mean <= 0:
            raise IdentifiabilityError(
                f"span {el.span_id}: non-positive attenuation from totals"
            )
        el.in_connector_db = float(l_in)
        el.out_connector_db = float(l_out)
        el.lumped_losses = [
            (float(np.clip(pos, 1e-3, el.length_km - 1e-3)), float(db))
            for pos, db in mids
        ]
        el.alpha_knots = [(params.grid.f_mid, float(alpha_mean))]
        gamma, aeff = separate_gamma_power(sp.gamma_p_in, 12.0, l_in)
        el.gamma_w_km, el.a_eff_um2 = float(gamma), float(aeff)
        if sp.cd_ps_nm:
            el.dispersion_ps_nm_km = float(sp.cd_ps_nm / sp.length_km)


def _shape_knot_matrix(grid: FrequencyGrid, n_knots: int = 5) -> np.ndarray:
    """Interpolation matrix from uniform frequency knots to grid slots."""
    f_knots = np.linspace(grid.f_min, grid.f_max, n_knots)
    mat = np.zeros((grid.n_channels, n_knots))
    for j in range(n_knots):
        unit = np.zeros(n_knots)
        unit[j] = 1.0
        mat[:, j] = np.interp(grid.frequencies, f_knots, unit)
    return mat


def _gain_knots(gains: list, merge_tol: float = 0.25) -> list:
    """Distinct commanded gains merged within a tolerance -> NF knots."""
    knots = []
    for g in sorted(gains):
        if not knots or g - knots[-1] > merge_tol:
            knots.append(g)
        # else: collapse near-duplicates
    return knots


def _interp_weights(knots: list, x: float) -> np.ndarray:
    """Piecewise-linear interpolation weights, clamped at the ends."""
    w = np.zeros(len(knots))
    if x <= knots[0]:
        w[0] = 1.0
    elif x >= knots[-1]:
        w[-1] = 1.0
    else:
        j = int(np.searchsorted(knots, x) - 1)
        t = (x - knots[j]) / (knots[j + 1] - knots[j])
        w[j], w[j + 1] = 1.0 - t, t
    return w


def _stage2_nf(
    params: ParameterSet,
    dataset: CalibrationDataset,
    flat: bool = False,
    smooth_lambda: float = 0.05,
):
    """Linear solve of per-amplifier NF(gain) from in-hole noise floors.

    ``flat`` fits one NF value per amplifier (robust while the spectral
    shapes are still coarse); otherwise knots sit at the sampled gains with
    a second-difference smoothness ridge.
    """
    _, spans, edfas = _carrier_layout(params)
    grid = params.grid
    holes = sorted(dataset.comb.blocked_slots)
    observed = dataset.observed_gains()
    knots = {}
    for _, e in edfas:
        gains = observed.get(e.edfa_id, [])
        if len(gains) < 2:
            raise IdentifiabilityError(
                f"EDFA {e.edfa_id}: fewer than 2 distinct gains in the dataset"
            )
        knots[e.edfa_id] = [float(np.mean(gains))] if flat else _gain_knots(gains)
    col_of = {}
    for _, e in edfas:
        for j in range(len(knots[e.edfa_id])):
            col_of[(e.edfa_id, j)] = len(col_of)
    n_cols = len(col_of)

    rows, rhs = [], []
    line = params.as_line()
    tx = dataset.comb.tx_signal_mw(grid)
    sl = line.carrier_slice()
    for rec in dataset.records:
        traces = propagate(
            line.elements[sl], grid, tx, settings=rec.settings,
            shared_ripple_db=line.shared_ripple_db, track_ase_sources=True,
        )
        rx = traces[-1].state
        gains_now = {t.element_id: t for t in traces if t.kind == "edfa"}
        # Transfer of each source's unit-NF ASE to the receive port: current
        # per-source contribution divided by the NF it was computed with.
        meas_floor = db_to_linear(rec.rx_spectrum.values[holes])
        unit = {}
        for eid, contrib in rx.ase_by_source.items():
            nf_lin_now = db_to_linear(gains_now[eid].nf_db)
            unit[eid] = contrib[holes] / nf_lin_now
        for hi in range(len(holes)):
            row = np.zeros(n_cols)
            for _, e in edfas:
                if flat:
                    row[col_of[(e.edfa_id, 0)]] = unit[e.edfa_id][hi]
                else:
                    w = _interp_weights(
                        knots[e.edfa_id], float(gains_now[e.edfa_id].gain_db)
                    )
                    for j, wj in enumerate(w):
                        if wj:
                            row[col_of[(e.edfa_id, j)]] = wj * unit[e.edfa_id][hi]
            scale = 1.0 / max(meas_floor[hi], 1e-30)
            rows.append(row * scale)
            rhs.append(meas_floor[hi] * scale)

    if not flat:
        # Smoothness ridge on adjacent knots plus a weak pull to the current
        # curve keeps sparsely visited knots from absorbing shape residuals.
        for _, e in edfas:
            ks = knots[e.edfa_id]
            for j in range(1, len(ks) - 1):
                row = np.zeros(n_cols)
                row[col_of[(e.edfa_id, j - 1)]] = smooth_lambda
                row[col_of[(e.edfa_id, j)]] = -2.0 * smooth_lambda
                row[col_of[(e.edfa_id, j + 1)]] = smooth_lambda
                rows.append(row)
                rhs.append(0.0)

    a = np.vstack(rows)
    b = np.asarray(rhs)
    sol, *_ = np.linalg.lstsq(a, b, rcond=None)
    sol = np.clip(sol, db_to_linear(2.0), db_to_linear(12.0))
    for _, e in edfas:
        ks = knots[e.edfa_id]
        new_curve = [
            (float(g), float(linear_to_db(sol[col_of[(e.edfa_id, j)]])))
            for j, g in enumerate(ks)
        ]
        if len(new_curve) == 1:
            g0, nf0 = new_curve[0]
            new_curve = [(g0 - 1.0, nf0), (g0 + 1.0, nf0)]
        e.nf_curve = new_curve


def _joint_linear_round(
    params: ParameterSet,
    dataset: CalibrationDataset,
    n_knots: int = 5,
    nf_smooth_lambda: float = 0.05,
):
    """One dB-linearized Newton round over NF knots, ripple and alpha shapes.

    All three parameter groups enter the in-hole floor and edge-spectrum
    residuals linearly once expressed as dB increments around the current
    operating point, so a single least-squares solve updates them jointly;
    iterating the round converges the coupled system.
    """
    sl, spans, edfas = _carrier_layout(params)
    grid = params.grid
    n = grid.n_channels
    holes = sorted(dataset.comb.blocked_slots)
    sig_mask = np.ones(n, dtype=bool)
    sig_mask[holes] = False
    kmat = _shape_knot_matrix(grid, n_knots)

    observed = dataset.observed_gains()
    nf_knots = {}
    for _, e in edfas:
        gains = observed.get(e.edfa_id, [])
        if len(gains) < 2:
            raise IdentifiabilityError(
                f"EDFA {e.edfa_id}: fewer than 2 distinct gains in the dataset"
            )
        nf_knots[e.edfa_id] = _gain_knots(gains)

    # Column layout: NF knot dB deltas, ripple slots, per-span shape knots.
    col_of = {}
    for _, e in edfas:
        for j in range(len(nf_knots[e.edfa_id])):
            col_of[(e.edfa_id, j)] = len(col_of)
    n_nf = len(col_of)
    col_ripple0 = n_nf
    col_shape0 = {si: n_nf + n + k * n_knots for k, (si, _) in enumerate(spans)}
    n_cols = n_nf + n + n_knots * len(spans)

    downstream_spans = {}
    ripple_mult = {}
    for ei, e in edfas:
        downstream_spans[e.edfa_id] = [si for si, _ in spans if si > ei]
        ripple_mult[e.edfa_id] = 1 + sum(1 for ej, _ in edfas if ej > ei)

    line = params.as_line()
    tx = dataset.comb.tx_signal_mw(grid)
    rows, rhs = [], []

    sig_resid_sum = np.zeros(n)
    for rec in dataset.records:
        traces = propagate(
            line.elements[sl], grid, tx, settings=rec.settings,
            shared_ripple_db=line.shared_ripple_db, track_ase_sources=True,
        )
        rx = traces[-1].state
        model_rx_db = linear_to_db(
            np.maximum(rx.signal_mw + rx.ase_mw + rx.nli_mw, 1e-30)
        )
        sig_resid_sum += rec.rx_spectrum.values - model_rx_db

        gains_now = {t.element_id: t for t in traces if t.kind == "edfa"}
        total_floor = np.maximum(rx.ase_mw[holes], 1e-30)
        meas_floor_db = rec.rx_spectrum.values[holes]
        model_floor_db = linear_to_db(total_floor)
        nf_w = {
            e.edfa_id: _interp_weights(
                nf_knots[e.edfa_id], float(gains_now[e.edfa_id].gain_db)
            )
            for _, e in edfas
        }
        for hi, h in enumerate(holes):
            share = {
                eid: contrib[h] / total_floor[hi]
                for eid, contrib in rx.ase_by_source.items()
            }
            row = np.zeros(n_cols)
            for eid, sh in share.items():
                for j, wj in enumerate(nf_w[eid]):
                    if wj:
                        row[col_of[(eid, j)]] += sh * wj
                row[col_ripple0 + h] += sh * ripple_mult[eid]
                for si in downstream_spans[eid]:
                    span = params.elements[si]
                    row[col_shape0[si] : col_shape0[si] + n_knots] -= (
                        sh * span.length_km * kmat[h]
                    )
            rows.append(row)
            rhs.append(meas_floor_db[hi] - model_floor_db[hi])

    # Signal-shape equations: record-averaged per-slot residual (weighted up,
    # they are the cleanest shape observable).
    n_amps = len(edfas)
    w_sig = 3.0
    sig_resid = sig_resid_sum / len(dataset.records)
    for s in np.nonzero(sig_mask)[0]:
        row = np.zeros(n_cols)
        row[col_ripple0 + s] = n_amps
        for si, span in spans:
            row[col_shape0[si] : col_shape0[si] + n_knots] -= span.length_km * kmat[s]
        rows.append(row * w_sig)
        rhs.append((sig_resid[s] - np.mean(sig_resid[sig_mask])) * w_sig)

    # Zero-mean constraints and regularization.
    big = 100.0
    row = np.zeros(n_cols)
    row[col_ripple0 : col_ripple0 + n] = big / n
    rows.append(row)
    rhs.append(0.0)
    for si, _ in spans:
        row = np.zeros(n_cols)
        row[col_shape0[si] : col_shape0[si] + n_knots] = big * np.mean(kmat, axis=0)
        rows.append(row)
        rhs.append(0.0)
    for _, e in edfas:
        ks = nf_knots[e.edfa_id]
        for j in range(1, len(ks) - 1):
            row = np.zeros(n_cols)
            row[col_of[(e.edfa_id, j - 1)]] = nf_smooth_lambda
            row[col_of[(e.edfa_id, j)]] = -2.0 * nf_smooth_lambda
            row[col_of[(e.edfa_id, j + 1)]] = nf_smooth_lambda
            rows.append(row)
            rhs.append(0.0)

    a = np.vstack(rows)
    b = np.asarray(rhs)
    lam = 1e-3
    a = np.vstack([a, lam * np.eye(n_cols)])
    b = np.concatenate([b, np.zeros(n_cols)])
    sol, *_ = np.linalg.lstsq(a, b, rcond=None)

    # Apply NF increments.
    for _, e in edfas:
        ks = nf_knots[e.edfa_id]
        current = [e.nf_db(g) for g in ks]
        newvals = [
            float(np.clip(c + sol[col_of[(e.edfa_id, j)]], 2.0, 12.0))
            for j, c in enumerate(current)
        ]
        if len(ks) == 1:
            e.nf_curve = [(ks[0] - 1.0, newvals[0]), (ks[0] + 1.0, newvals[0])]
        else:
            e.nf_curve = [(float(g), v) for g, v in zip(ks, newvals)]

    params.shared_ripple_db = params.shared_ripple_db + sol[col_ripple0 : col_ripple0 + n]
    params.shared_ripple_db -= np.mean(params.shared_ripple_db)
    for si, span in spans:
        dk = sol[col_shape0[si] : col_shape0[si] + n_knots]
        f_knots = np.linspace(grid.f_min, grid.f_max, n_knots)
        newvals = span.alpha_db_km(f_knots) + dk
        # Re-center so the band mean from the loss stage is preserved.
        mean_now = float(np.mean(np.interp(grid.frequencies, f_knots, newvals)))
        mean_target = float(np.mean(span.alpha_db_km(grid.frequencies)))
        newvals += mean_target - mean_now
        span.alpha_knots = [(float(f), float(v)) for f, v in zip(f_knots, newvals)]


def calibrate(
    dataset: CalibrationDataset,
    dlm_extract: DlmExtract,
    init: ParameterSet,
    max_cost_evals: int = 2000,
    shape_rounds: int = 3,
    cancel=None,
    w_p: float = 1.0,
    w_o: float = 1.0,
) -> CalibResult:
    """Staged fit: deterministic loss/NF/shape stages, then a simplex polish.

    Stages: (1) connectors and band-mean attenuation from photodiode totals
    plus the longitudinal extraction, (2) NF(gain) per amplifier from
    in-hole noise floors, (3) attenuation shapes and the shared ripple from
    edge spectra, iterated with (2); (4) derivative-free joint polish over
    low-dimensional residual offsets within the evaluation budget.
    """
    params = copy.deepcopy(init)
    params.provenance = "calibrated"
    ex_map = _span_extract_map(params, dlm_extract)

    evals = [0]

    def tracked_cost(p) -> float:
        evals[0] += 1
        return cost(p, dataset, w_p=w_p, w_o=w_o)

    cost_trace = [("init", tracked_cost(params))]

    _stage1_losses(params, dataset, ex_map)
    cost_trace.append(("losses", tracked_cost(params)))

    # One flat-NF pass takes the large baseline NF offset out, then joint
    # Newton rounds converge NF knots, ripple and alpha shapes together.
    _stage2_nf(params, dataset, flat=True)
    for _ in range(shape_rounds + 2):
        _joint_linear_round(params, dataset)
        if cancel is not None and cancel():
            break
    cost_trace.append(("nf_shapes", tracked_cost(params)))

    # Stage 4: simplex polish over residual offsets.
    _, spans, edfas = _carrier_layout(params)
    base = copy.deepcopy(params)
    x0 = np.zeros(len(edfas) + len(spans) + 1)

    def apply_offsets(x) -> ParameterSet:
        p = copy.deepcopy(base)
        _, sp2, ed2 = _carrier_layout(p)
        for k, (_, e) in enumerate(ed2):
            e.nf_curve = [(g, nf + x[k]) for g, nf in e.nf_curve]
        for k, (_, s) in enumerate(sp2):
            off = x[len(ed2) + k] / max(s.length_km, 1e-9)
            s.alpha_knots = [(f, a + off) for f, a in s.alpha_knots]
        scale = 1.0 + x[-1]
        p.shared_ripple_db = base.shared_ripple_db * scale
        p.shared_ripple_db -= np.mean(p.shared_ripple_db)
        return p

    cancelled = False
    budget = max(0, max_cost_evals - evals[0] - 1)

    def objective(x):
        nonlocal cancelled
        if cancel is not None and cancel():
            cancelled = True
            raise StopIteration
        if evals[0] >= max_cost_evals:
            raise StopIteration
        return tracked_cost(apply_offsets(x))

    best_x = x0
    if budget > len(x0) + 2:
        converged = True
        try:
            res = minimize(
                objective,
                x0,
                method="Nelder-Mead",
                options={
                    "maxfev": budget,
                    "xatol": 1e-4,
                    "fatol": 1e-7,
                    "initial_simplex": np.vstack([x0] + [x0 + 0.05 * e for e in np.eye(len(x0))]),
                },
            )
            best_x = res.x
            converged = bool(res.success)
        except StopIteration:
            converged = False
    else:
        converged = False
    polished = apply_offsets(best_x)
    c_polished = tracked_cost(polished)
    if c_polished <= cost_trace[-1][1]:
        params = polished
        cost_trace.append(("polish", c_polished))
    else:
        cost_trace.append(("polish", cost_trace[-1][1]))
    if cancelled:
        converged = False

    final_cost, per_record = cost(params, dataset, w_p=w_p, w_o=w_o, detail=True)

    # Residual OSNR-ripple statistics -> correction profile and margin.
    n = params.grid.n_channels
    sums = np.zeros(n)
    counts = np.zeros(n)
    pool = []
    fit_report = []
    for err in per_record:
        valid, resid = err.pop("_osnr_ripple_residual")
        err.pop("_sig_residual", None)
        sums[valid] += resid
        counts[valid] += 1
        pool.extend(resid.tolist())
        fit_report.append(err)
    with np.errstate(invalid="ignore"):
        correction = np.where(counts > 0, sums / np.maximum(counts, 1), 0.0)
    margin = float(3.0 * np.std(np.asarray(pool))) if pool else 0.0

    connectors = {}
    nf_curves = {}
    for i, el in enumerate(params.elements):
        if isinstance(el, FiberSpan) and params.segment_tags[i] == "carrier":
            connectors[el.span_id] = (el.in_connector_db, el.out_connector_db)
        if isinstance(el, EdfaModel) and params.segment_tags[i] == "carrier":
            nf_curves[el.edfa_id] = list(el.nf_curve)

    return CalibResult(
        params=params,
        connectors=connectors,
        nf_curves=nf_curves,
        shared_ripple=SpectralProfile(params.grid, params.shared_ripple_db, "dB"),
        osnr_ripple_correction=SpectralProfile(params.grid, correction, "dB"),
        osnr_ripple_margin_db=margin,
        fit_report=fit_report,
        cost_trace=[(name, float(c)) for name, c in cost_trace],
        converged=converged,
        cancelled=cancelled,
    )


# ---------------------------------------------------------------------------
# Merge


def merge(
    dlm_extract: DlmExtract,
    calib_result: CalibResult,
    dlm_launch_dbm: float = 12.0,
    conflict_tol_db: float = 0.3,
) -> ParameterSet:
    """Combine extraction and calibration into one calibrated parameter set.

    Carrier spans keep the calibrated values (connector conflicts beyond the
    tolerance are noted, calibration wins); access spans take attenuation,
    connectors and lumped losses from the longitudinal extraction, with
    nonlinearity split off via the known monitor launch convention and a
    flat assumed NF on their amplifiers.
    """
    params = copy.deepcopy(calib_result.params)
    params.provenance = "calibrated"
    notes = list(calib_result.notes)
    ex_map = _span_extract_map(params, dlm_extract)

    for i, el in enumerate(params.elements):
        if not isinstance(el, FiberSpan):
            continue
        sp = ex_map[i]
        l_in, l_out, mids = _extract_edge_losses(sp)
        if params.segment_tags[i] == "carrier":
            if abs(l_in - el.in_connector_db) > conflict_tol_db:
                notes.append(
                    f"span {el.span_id}: input connector conflict "
                    f"(profile {l_in:.2f} dB vs calibration {el.in_connector_db:.2f} dB); "
                    "calibration value kept"
                )
            if abs(l_out - el.out_connector_db) > conflict_tol_db:
                notes.append(
                    f"span {el.span_id}: output connector conflict "
                    f"(profile {l_out:.2f} dB vs calibration {el.out_connector_db:.2f} dB); "
                    "calibration value kept"
                )
        else:
            el.in_connector_db = float(l_in)
            el.out_connector_db = float(l_out)
            el.lumped_losses = [
                (float(np.clip(pos, 1e-3, el.length_km - 1e-3)), float(db))
                for pos, db in mids
            ]
            el.alpha_knots = [(params.grid.f_mid, float(sp.alpha_dlm_db_km))]
            gamma, aeff = separate_gamma_power(sp.gamma_p_in, dlm_launch_dbm, l_in)
            el.gamma_w_km, el.a_eff_um2 = float(gamma), float(aeff)
            if sp.cd_ps_nm:
                el.dispersion_ps_nm_km = float(sp.cd_ps_nm / sp.length_km)
    for i, el in enumerate(params.elements):
        if isinstance(el, EdfaModel) and params.segment_tags[i] != "carrier":
            el.nf_curve = [(5.0, AAL_NF_DB), (25.0, AAL_NF_DB)]
    params.notes = notes
    return params
