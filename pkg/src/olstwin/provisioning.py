"""Timed, human-gated provisioning workflow with rollback.

Runs the full sequence on a simulated clock: monitor-channel setup and
measurement, profile extraction in parallel with the calibration sweep,
calibration compute plus visualization artifacts, an operator decision gate
(adopt/revert, with a revert-on-timeout fail-safe) and the final device
configuration. Raw measurement arrays stay in the local store; only
extracted parameters and reports cross to the remote store.
"""

from __future__ import annotations

import csv
import io
import json
import uuid
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import calib as calib_mod
from . import dlm as dlm_mod
from .devices import DeviceInventory, HybridStore, inventory_for_line
from .elements import EdfaModel, FiberSpan
from .gn import ParameterSet, predict
from .plant import CombSource, NoiseSpec, OpticalLinePlant, dlm_measure, measure, propagate_true
from .propagation import EdfaSetting
from .qot import TransceiverModel, combine_snr, relative_q
from .spectral import linear_to_db

STATES = (
    "Idle",
    "DlmSetup",
    "DlmMeasure",
    "DlmCompute",
    "CalibSetupMeasure",
    "CalibCompute",
    "Visualize",
    "AwaitDecision",
    "Commit",
    "Revert",
    "Done",
    "Failed",
)

#: Legal transitions; the profile-compute and calibration-measurement phases
#: overlap on the clock but the canonical state sequence passes through both.
TRANSITIONS = {
    "Idle": ("DlmSetup", "Failed"),
    "DlmSetup": ("DlmMeasure", "Failed"),
    "DlmMeasure": ("DlmCompute", "Failed"),
    "DlmCompute": ("CalibSetupMeasure", "Failed"),
    "CalibSetupMeasure": ("CalibCompute", "Failed"),
    "CalibCompute": ("Visualize", "Failed"),
    "Visualize": ("AwaitDecision", "Failed"),
    "AwaitDecision": ("Commit", "Revert", "Failed"),
    "Commit": ("Done", "Failed"),
    "Revert": ("Done", "Failed"),
    "Done": (),
    "Failed": (),
}


class IllegalTransition(RuntimeError):
    pass


@dataclass
class PhaseDurations:
    """Simulated phase durations in minutes."""

    dlm_setup_min: float = 3.0
    dlm_measure_min: float = 1.0
    dlm_compute_min: float = 3.5
    calib_setup_measure_min: float = 33.0
    calib_compute_min: float = 15.0
    inspection_min: float = 1.0
    final_config_min: float = 7.0


@dataclass
class RunConfig:
    durations: PhaseDurations = field(default_factory=PhaseDurations)
    decision_timeout_min: float = 10.0
    sweep_from_db: float = 12.0
    sweep_to_db: float = 20.0
    sweep_step_db: float = 0.5
    n_records: int = 58
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    comb: CombSource = field(default_factory=CombSource)
    trx: TransceiverModel = field(default_factory=TransceiverModel)
    q_offset_db: float = 13.7
    data_dir: str | None = None
    max_cost_evals: int = 2000


class AutoDecision:
    """Scripted operator: answers after the inspection delay."""

    def __init__(self, decision: str = "adopt", after_min: float = 1.0):
        if decision not in ("adopt", "revert"):
            raise ValueError("decision must be adopt or revert")
        self.decision = decision
        self.after_min = after_min

    def decide(self, run, timeout_min: float):
        if self.after_min > timeout_min:
            return None
        return self.decision, self.after_min


class NoDecision:
    """Operator never answers; the gate times out."""

    def decide(self, run, timeout_min: float):
        return None


@dataclass
class ProvisioningRun:
    run_id: str
    state: str = "Idle"
    timeline: list = field(default_factory=list)  # (state, start_min, end_min)
    decision: dict | None = None
    artifacts: dict = field(default_factory=dict)
    store: HybridStore = field(default_factory=HybridStore)
    devices: DeviceInventory | None = None
    error: str | None = None
    clock_min: float = 0.0

    def transition(self, new_state: str) -> None:
        if new_state not in TRANSITIONS[self.state]:
            raise IllegalTransition(f"{self.state} -> {new_state}")
        self.state = new_state

    def spend(self, state: str, minutes: float, start: float | None = None) -> None:
        t0 = self.clock_min if start is None else start
        self.timeline.append((state, t0, t0 + minutes))
        self.clock_min = max(self.clock_min, t0 + minutes)

    @property
    def elapsed_min(self) -> float:
        if not self.timeline:
            return 0.0
        return max(e for _, _, e in self.timeline) - min(s for _, s, _ in self.timeline)

    def timeline_dict(self):
        return [{"state": s, "start_min": a, "end_min": b} for s, a, b in self.timeline]

    def summary(self):
        return {
            "run_id": self.run_id,
            "state": self.state,
            "elapsed_min": self.elapsed_min,
            "pending_decision": self.state == "AwaitDecision",
            "decision": self.decision,
            "artifacts": sorted(self.artifacts.keys()),
            "error": self.error,
        }


# ---------------------------------------------------------------------------
# Transparency configuration


def _carrier_edfa_ids(params: ParameterSet) -> list:
    return [
        e.edfa_id
        for e, t in zip(params.elements, params.segment_tags)
        if isinstance(e, EdfaModel) and t == "carrier"
    ]


def base_operating_settings(params: ParameterSet) -> dict:
    """Every amplifier at its model operating point (no tilt)."""
    settings = {}
    for el in params.elements:
        if isinstance(el, EdfaModel):
            if el.mode == "constant_power":
                settings[el.edfa_id] = EdfaSetting(power_dbm=el.setpoint_power_dbm)
            else:
                settings[el.edfa_id] = EdfaSetting(gain_db=el.target_gain_db)
    return settings


def _ete_q_db(params: ParameterSet, settings: dict, launch_mw, trx: TransceiverModel):
    pred = predict(params, launch_mw, settings)
    qs = [
        combine_snr([trx.snr_trx_db, float(pred.gsnr.values[s])])
        for s in params.grid.trx_slots
    ]
    return qs, pred


def carrier_booster_id(params: ParameterSet) -> str:
    """First carrier amplifier not preceded by a carrier span."""
    elements = params.elements
    for i, el in enumerate(elements):
        if not (isinstance(el, EdfaModel) and params.segment_tags[i] == "carrier"):
            continue
        prev_span = next((e for e in reversed(elements[:i]) if isinstance(e, FiberSpan)), None)
        if prev_span is None or params.segment_tags[elements.index(prev_span)] != "carrier":
            return el.edfa_id
    raise ValueError("no carrier booster found")


def configure_transparency(
    params: ParameterSet,
    comb: CombSource,
    trx: TransceiverModel | None = None,
    booster_grid_db=None,
    tilt_grid_db=None,
) -> dict:
    """Settings where each carrier amplifier recovers the preceding span loss.

    The booster takes the grid gain maximizing the predicted end-to-end
    Q-factor (lowest gain on ties); one common tilt minimizes the absolute
    linear-regression slope of the receive-edge signal spectrum; access-link
    amplifiers run constant-power at their setpoints.
    """
    trx = trx or TransceiverModel()
    grid = params.grid
    launch = comb.tx_signal_mw(grid)
    settings = base_operating_settings(params)
    booster_id = carrier_booster_id(params)

    elements = params.elements
    for i, el in enumerate(elements):
        if not (isinstance(el, EdfaModel) and params.segment_tags[i] == "carrier"):
            continue
        if el.edfa_id == booster_id:
            continue
        prev_span = next(e for e in reversed(elements[:i]) if isinstance(e, FiberSpan))
        gain = float(np.mean(prev_span.total_loss_db(grid.frequencies)))
        settings[el.edfa_id] = EdfaSetting(gain_db=gain)

    # Common tilt: minimize the rx-spectrum slope at a mid-sweep booster gain.
    if tilt_grid_db is None:
        tilt_grid_db = np.arange(-3.0, 3.0 + 1e-9, 0.1)
    carrier_ids = _carrier_edfa_ids(params)
    f = grid.frequencies
    f_rel = (f - grid.f_mid) / (grid.f_max - grid.f_min)
    active = [s for s in range(grid.n_channels) if s not in comb.blocked_slots]
    best_tilt, best_slope = 0.0, np.inf
    for tilt in tilt_grid_db:
        trial = {
            k: replace(v, tilt_db=float(tilt)) if k in carrier_ids else v
            for k, v in settings.items()
        }
        trial[booster_id] = EdfaSetting(gain_db=16.0, tilt_db=float(tilt))
        pred = predict(params, launch, trial)
        slope = float(np.polyfit(f_rel[active], pred.p_sig.values[active], 1)[0])
        if abs(slope) < abs(best_slope):
            best_slope, best_tilt = slope, float(tilt)
    for eid in carrier_ids:
        settings[eid] = replace(settings[eid], tilt_db=best_tilt)

    # Booster: argmax of predicted EtE Q over the sweep grid, ties -> lowest.
    if booster_grid_db is None:
        booster_grid_db = np.arange(12.0, 20.0 + 1e-9, 0.5)
    best_gain, best_q = None, -np.inf
    for g in booster_grid_db:
        trial = dict(settings)
        trial[booster_id] = replace(settings[booster_id], gain_db=float(g))
        qs, _ = _ete_q_db(params, trial, launch, trx)
        q = float(np.mean(qs))
        if q > best_q + 1e-9:
            best_q, best_gain = q, float(g)
    settings[booster_id] = replace(settings[booster_id], gain_db=best_gain)
    return settings


# ---------------------------------------------------------------------------
# Sweep and stability


def measure_ete_q(
    plant: OpticalLinePlant,
    comb: CombSource,
    settings: dict,
    trx: TransceiverModel,
    noise: NoiseSpec,
    sample_index: int = 0,
) -> list:
    """Measured end-to-end SNR [dB] per transceiver slot (noise included)."""
    launch = comb.tx_signal_mw(plant.grid)
    traces = propagate_true(plant, launch, settings)
    rx = traces[-1].state
    rng = noise.rng("qmeas", sample_index)
    out = []
    for s in plant.grid.trx_slots:
        gsnr_inv = 0.0
        if rx.ase_mw[s] > 0:
            gsnr_inv += (
                rx.ase_mw[s] * plant.grid.symbol_rate / plant.grid.ref_bandwidth
            ) / rx.signal_mw[s]
        if rx.nli_mw[s] > 0:
            gsnr_inv += rx.nli_mw[s] / rx.signal_mw[s]
        gsnr_db = -10.0 * np.log10(gsnr_inv) if gsnr_inv > 0 else np.inf
        ete = combine_snr([trx.snr_trx_db, gsnr_db])
        if noise.sigma_q_db > 0:
            ete += float(rng.normal(0.0, noise.sigma_q_db))
        out.append(float(ete))
    return out


def power_sweep(
    plant: OpticalLinePlant,
    calibrated: ParameterSet,
    baseline: ParameterSet,
    settings: dict,
    config: RunConfig,
    booster_id: str | None = None,
) -> list:
    """Booster gain sweep: measured vs calibrated/baseline predictions.

    One row per grid point with relative Q values per transceiver slot and
    the average/ripple error decomposition of both models against the
    measured spectra.
    """
    grid = plant.grid
    comb = config.comb
    trx = config.trx
    booster_id = booster_id or carrier_booster_id(calibrated)
    gains = np.arange(
        config.sweep_from_db,
        config.sweep_to_db + config.sweep_step_db / 2,
        config.sweep_step_db,
    )
    rows = []
    for i, g in enumerate(gains):
        trial = dict(settings)
        trial[booster_id] = replace(settings[booster_id], gain_db=float(g))
        rec = measure(plant, comb, trial, noise=config.noise, record_index=10_000 + i, scope="ete")
        meas_q = measure_ete_q(plant, comb, trial, trx, config.noise, sample_index=i)

        row = {"booster_gain_db": float(g)}
        for s, mq in zip(grid.trx_slots, meas_q):
            row[f"q_meas_ch{s}_db"] = mq - config.q_offset_db
        for label, params in (("cal", calibrated), ("base", baseline)):
            sim = calib_mod.simulate_record(params, comb, trial, scope="ete")
            err = calib_mod._record_errors(rec, sim, comb.blocked_slots)
            row[f"d_psig_avg_{label}_db"] = err["d_psig_avg_db"]
            row[f"d_psig_ripple_{label}_db"] = err["d_psig_ripple_mean_abs_db"]
            row[f"d_osnr_avg_{label}_db"] = err["d_osnr_avg_db"]
            row[f"d_osnr_ripple_{label}_db"] = err["d_osnr_ripple_mean_abs_db"]
            pred_q, _ = _ete_q_db(params, trial, comb.tx_signal_mw(grid), trx)
            report = relative_q(
                pred_q, meas_q, offset_db=config.q_offset_db, channels=list(grid.trx_slots)
            )
            for s, pq, eq in zip(
                grid.trx_slots, report.predicted_relative_q_db, report.error_db()
            ):
                row[f"q_{label}_ch{s}_db"] = pq
                row[f"dq_{label}_ch{s}_db"] = eq
        rows.append(row)
    return rows


def stability_run(
    plant: OpticalLinePlant,
    comb: CombSource,
    settings: dict,
    trx: TransceiverModel,
    noise: NoiseSpec,
    duration_min: float = 300.0,
    interval_min: float = 1.0,
    offset_db: float = 13.7,
) -> dict:
    """Repeated Q measurement on the committed configuration; per-channel 3-sigma."""
    n = int(round(duration_min / interval_min))
    slots = list(plant.grid.trx_slots)
    series = np.zeros((n, len(slots)))
    for i in range(n):
        series[i] = measure_ete_q(plant, comb, settings, trx, noise, sample_index=50_000 + i)
    rel = series - offset_db
    return {
        "interval_min": interval_min,
        "channels": slots,
        "relative_q_db": rel.tolist(),
        "three_sigma_db": (3.0 * np.std(series, axis=0)).tolist(),
        "offset_db": offset_db,
    }


# ---------------------------------------------------------------------------
# Pipeline: the heavy computations behind each phase, injectable for tests


class RealPipeline:
    """Default phase implementations against a simulated plant."""

    def dlm_measure(self, plant, config):
        return dlm_measure(plant, noise=config.noise)

    def dlm_compute(self, profile, plant, config):
        return dlm_mod.extract(profile, [s.length_km for s in plant.spans()])

    def calib_measure(self, plant, config):
        ids = _carrier_edfa_ids(ParameterSet.from_plant(plant))
        base_gains = {eid: 16.0 for eid in ids}
        plan = calib_mod.make_sweep_plan(ids, base_gains, n_records=config.n_records)
        dataset = calib_mod.collect_dataset(plant, config.comb, plan, noise=config.noise)
        probe = measure(
            plant,
            config.comb,
            base_operating_settings(ParameterSet.from_plant(plant)),
            noise=config.noise,
            record_index=9_999,
            scope="ete",
        )
        return dataset, probe

    def calib_compute(self, dataset, extract, probe, plant, config):
        inventory = calib_mod.line_inventory(plant)
        pd_totals = {
            eid: (probe.edfa_pin_dbm[eid], probe.edfa_pout_dbm[eid])
            for eid in probe.edfa_pin_dbm
        }
        tx_tot = float(linear_to_db(np.sum(probe.tx_spectrum.to_linear().values)))
        rx_tot = float(linear_to_db(np.sum(probe.rx_spectrum.to_linear().values)))
        baseline = calib_mod.build_baseline(
            inventory, pd_totals, tx_total_dbm=tx_tot, rx_total_dbm=rx_tot
        )
        result = calib_mod.calibrate(
            dataset, extract, baseline, max_cost_evals=config.max_cost_evals
        )
        merged = calib_mod.merge(extract, result, dlm_launch_dbm=plant.dlm_setpoint_dbm)
        return baseline, result, merged

    def plan_and_validate(self, plant, merged, baseline, config):
        settings = configure_transparency(merged, config.comb, config.trx)
        rows = power_sweep(plant, merged, baseline, settings, config)
        return settings, rows


class NullPipeline:
    """Instant stand-ins; exercises the state machine, stores and devices."""

    def dlm_measure(self, plant, config):
        return {"kind": "profile-stub"}

    def dlm_compute(self, profile, plant, config):
        return {"kind": "extract-stub"}

    def calib_measure(self, plant, config):
        return {"kind": "dataset-stub"}, {"kind": "probe-stub"}

    def calib_compute(self, dataset, extract, probe, plant, config):
        params = ParameterSet.from_plant(plant, provenance="calibrated")
        return ParameterSet.from_plant(plant, provenance="baseline"), None, params

    def plan_and_validate(self, plant, merged, baseline, config):
        return base_operating_settings(merged), []


def _as_dict(obj):
    if obj is None:
        return None
    return obj.to_dict() if hasattr(obj, "to_dict") else obj


# ---------------------------------------------------------------------------
# The run itself


def _sweep_csv(rows: list) -> str:
    if not rows:
        return ""
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(rows[0].keys()))
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()


def _write_artifacts(run: ProvisioningRun, data_dir: str) -> None:
    out = Path(data_dir) / run.run_id
    out.mkdir(parents=True, exist_ok=True)
    files = {
        "dataset1.json": run.store.remote.get("dataset1"),
        "dataset2.json": run.store.remote.get("dataset2"),
        "params.json": run.store.remote.get("params"),
        "timeline.json": run.timeline_dict(),
        "decision.json": run.decision,
    }
    for name, obj in files.items():
        if obj is not None:
            (out / name).write_text(json.dumps(obj, indent=1))
    sweep = run.artifacts.get("sweep_rows")
    if sweep:
        (out / "sweep.csv").write_text(_sweep_csv(sweep))


def run_provisioning(
    plant: OpticalLinePlant,
    config: RunConfig | None = None,
    decision_source=None,
    run_id: str | None = None,
    run: ProvisioningRun | None = None,
    pipeline=None,
) -> ProvisioningRun:
    """Execute the whole workflow against one plant on a virtual clock."""
    config = config or RunConfig()
    decision_source = decision_source or AutoDecision("adopt")
    pipeline = pipeline or RealPipeline()
    d = config.durations
    if run is None:
        run = ProvisioningRun(run_id=run_id or uuid.uuid4().hex[:12])
    run.devices = inventory_for_line(plant)
    snapshot = run.devices.snapshot_running()

    def rollback():
        run.devices.discard_all()
        run.devices.restore_running(snapshot)

    try:
        run.transition("DlmSetup")
        for dev in run.devices.devices.values():
            if dev.kind == "trx":
                dev.edit_candidate({"monitor_mode": True})
        run.spend("DlmSetup", d.dlm_setup_min)

        run.transition("DlmMeasure")
        profile = pipeline.dlm_measure(plant, config)
        run.store.put_local("dlm_raw_profile", _as_dict(profile))
        run.spend("DlmMeasure", d.dlm_measure_min)

        # Profile compute and calibration measurement run in parallel.
        fork_t = run.clock_min
        run.transition("DlmCompute")
        extract = pipeline.dlm_compute(profile, plant, config)
        run.store.put_local("dataset1", _as_dict(extract))
        run.store.put_remote("dataset1", _as_dict(extract))
        run.spend("DlmCompute", d.dlm_compute_min, start=fork_t)

        run.transition("CalibSetupMeasure")
        dataset, probe = pipeline.calib_measure(plant, config)
        if hasattr(dataset, "records"):
            run.store.put_local(
                "calibration_records", [r.to_dict() for r in dataset.records]
            )
        run.spend("CalibSetupMeasure", d.calib_setup_measure_min, start=fork_t)

        run.transition("CalibCompute")
        baseline, result, merged = pipeline.calib_compute(
            dataset, extract, probe, plant, config
        )
        run.store.put_local("dataset2", _as_dict(result))
        run.store.put_remote("dataset2", _as_dict(result))
        run.store.put_remote("params", _as_dict(merged))
        run.store.put_remote("baseline_params", _as_dict(baseline))
        settings, sweep_rows = pipeline.plan_and_validate(plant, merged, baseline, config)
        run.artifacts.update(
            {
                "sweep_rows": sweep_rows,
                "transparency_settings": {k: v.to_dict() for k, v in settings.items()},
                "params": merged,
                "baseline": baseline,
                "extract": extract,
                "profile": profile,
                "calib_result": result,
            }
        )
        run.store.put_remote(
            "sweep_report", {"rows": sweep_rows, "offset_db": config.q_offset_db}
        )
        run.spend("CalibCompute", d.calib_compute_min)

        run.transition("Visualize")
        run.spend("Visualize", 0.0)

        run.transition("AwaitDecision")
        answer = decision_source.decide(run, config.decision_timeout_min)
        if answer is None:
            run.decision = {
                "decision": "revert",
                "decided_by": "timeout",
                "at_min": run.clock_min + config.decision_timeout_min,
            }
            run.spend("AwaitDecision", config.decision_timeout_min)
            run.transition("Revert")
            rollback()
            run.spend("Revert", d.final_config_min)
        else:
            decision, delay_min = answer
            delay_min = min(delay_min, config.decision_timeout_min)
            run.decision = {
                "decision": decision,
                "decided_by": "operator",
                "at_min": run.clock_min + delay_min,
            }
            run.spend("AwaitDecision", delay_min)
            if decision == "adopt":
                run.transition("Commit")
                for eid, setting in settings.items():
                    dev = run.devices[eid]
                    patch = {"tilt_db": setting.tilt_db}
                    if setting.power_dbm is not None:
                        patch.update(
                            {"mode": "constant_power", "power_dbm": setting.power_dbm}
                        )
                    else:
                        patch.update(
                            {"mode": "constant_gain_agc", "gain_db": setting.gain_db}
                        )
                    dev.edit_candidate(patch)
                run.devices["FXC-1"].edit_candidate({"route": "new_line"})
                run.devices["FXC-2"].edit_candidate({"route": "new_line"})
                run.devices.commit_all()
                run.spend("Commit", d.final_config_min)
            else:
                run.transition("Revert")
                rollback()
                run.spend("Revert", d.final_config_min)
        run.transition("Done")
        run.store.assert_remote_clean()
    except Exception as exc:  # noqa: BLE001 - any phase failure rolls back
        if run.state in ("Done", "Failed"):
            raise
        run.error = f"{type(exc).__name__}: {exc}"
        run.state = "Failed"
        rollback()
        run.spend("Failed", 0.0)
    if config.data_dir:
        _write_artifacts(run, config.data_dir)
    return run
