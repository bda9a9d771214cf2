"""Operator/developer command line for the line twin."""

from __future__ import annotations

import functools
import json
import os
import sys
from pathlib import Path

import click
import numpy as np
import yaml

from . import dlm as dlm_mod
from .gn import ParameterSet, predict
from .plant import CombSource, NoiseSpec, dlm_measure, measure
from .plantio import example_plant_path, load_plant
from .propagation import EdfaSetting
from .provisioning import (
    AutoDecision,
    RunConfig,
    base_operating_settings,
    power_sweep,
    run_provisioning,
)


def _fail(ctx_json: bool, exc: Exception) -> None:
    if ctx_json:
        sys.stderr.write(
            json.dumps({"error": type(exc).__name__, "message": str(exc)}) + "\n"
        )
    else:
        sys.stderr.write(f"error: {exc}\n")
    sys.exit(1)


def handle_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        use_json = kwargs.get("as_json", False)
        try:
            return fn(*args, **kwargs)
        except SystemExit:
            raise
        except Exception as exc:  # noqa: BLE001 - CLI boundary
            _fail(use_json, exc)

    return wrapper


def _load_settings(path: str | None, plant) -> dict:
    params = ParameterSet.from_plant(plant)
    if path is None:
        return base_operating_settings(params)
    with open(path, "r", encoding="utf-8") as fh:
        doc = yaml.safe_load(fh)
    return {k: EdfaSetting(**v) for k, v in doc.items()}


@click.group()
def main():
    """Digital twin of a multi-span amplified line: simulate, estimate, provision."""


@main.command()
@click.option("--plant", "plant_path", required=True, type=click.Path(exists=True))
@click.option("--settings", "settings_path", type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--seed", default=0, show_default=True)
@click.option("--json", "as_json", is_flag=True, help="machine-readable errors")
@handle_errors
def simulate(plant_path, settings_path, out_dir, seed, as_json):
    """One measurement plus prediction artifacts for a plant."""
    plant = load_plant(plant_path)
    settings = _load_settings(settings_path, plant)
    noise = NoiseSpec(seed=seed)
    comb = CombSource()
    rec = measure(plant, comb, settings, noise=noise, scope="ete")
    pred = predict(ParameterSet.from_plant(plant), comb.tx_signal_mw(plant.grid), settings)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "telemetry.json").write_text(json.dumps(rec.to_dict(), indent=1))
    (out / "prediction.json").write_text(
        json.dumps(
            {
                "p_sig_dbm": pred.p_sig.values.tolist(),
                "osnr_db": pred.osnr.values.tolist(),
                "snr_nli_db": [
                    None if not np.isfinite(v) else v for v in pred.snr_nli.values
                ],
                "gsnr_db": pred.gsnr.values.tolist(),
                "saturated_edfas": list(pred.saturated_edfas),
            },
            indent=1,
        )
    )
    click.echo(f"wrote {out / 'telemetry.json'} and {out / 'prediction.json'}")


@main.command()
@click.option("--plant", "plant_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", default="dataset1.json", show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--json", "as_json", is_flag=True)
@handle_errors
def dlm(plant_path, out_path, seed, as_json):
    """Longitudinal profile measurement and per-span extraction."""
    plant = load_plant(plant_path)
    profile = dlm_measure(plant, noise=NoiseSpec(seed=seed))
    extract = dlm_mod.extract(profile, [s.length_km for s in plant.spans()])
    Path(out_path).write_text(
        json.dumps({"extract": extract.to_dict(), "profile": profile.to_dict()}, indent=1)
    )
    click.echo(f"wrote {out_path}")


@main.command()
@click.option("--plant", "plant_path", required=True, type=click.Path(exists=True))
@click.option("--records", default=58, show_default=True)
@click.option("--out", "out_path", default="dataset2.json", show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--sigma-zero", is_flag=True, help="noise-free measurements")
@click.option("--json", "as_json", is_flag=True)
@handle_errors
def calibrate(plant_path, records, out_path, seed, sigma_zero, as_json):
    """Full calibration against a gain/tilt measurement sweep."""
    from .provisioning import RealPipeline

    plant = load_plant(plant_path)
    cfg = RunConfig(
        noise=NoiseSpec.zero(seed) if sigma_zero else NoiseSpec(seed=seed),
        n_records=records,
    )
    pipe = RealPipeline()
    profile = pipe.dlm_measure(plant, cfg)
    extract = pipe.dlm_compute(profile, plant, cfg)
    dataset, probe = pipe.calib_measure(plant, cfg)
    baseline, result, merged = pipe.calib_compute(dataset, extract, probe, plant, cfg)
    Path(out_path).write_text(json.dumps(result.to_dict(), indent=1))
    params_path = Path(out_path).with_name("params.json")
    params_path.write_text(json.dumps(merged.to_dict(), indent=1))
    baseline_path = Path(out_path).with_name("baseline_params.json")
    baseline_path.write_text(json.dumps(baseline.to_dict(), indent=1))
    click.echo(
        f"wrote {out_path}, {params_path}, {baseline_path} "
        f"(final cost {result.cost_trace[-1][1]:.5f}, converged={result.converged})"
    )


@main.command()
@click.option("--plant", "plant_path", required=True, type=click.Path(exists=True))
@click.option("--auto-approve", is_flag=True, help="adopt after the inspection minute")
@click.option("--serve", "serve_mode", is_flag=True, help="park in AwaitDecision for the console")
@click.option("--data-dir", default=None)
@click.option("--seed", default=0, show_default=True)
@click.option("--records", default=58, show_default=True)
@click.option("--json", "as_json", is_flag=True)
@handle_errors
def provision(plant_path, auto_approve, serve_mode, data_dir, seed, records, as_json):
    """Run the timed provisioning workflow against a plant."""
    plant = load_plant(plant_path)
    data_dir = data_dir or os.environ.get("OLS_TWIN_DATA", "runs")
    if serve_mode:
        import uvicorn

        from .service import create_app

        addr = os.environ.get("OLS_TWIN_ADDR", "127.0.0.1:8080")
        host, _, port = addr.partition(":")
        app = create_app(data_dir=data_dir, wall_seconds_per_min=60.0)
        plant_id = "cli"
        app.state.plants[plant_id] = plant
        run_id = app.state.start_run(
            plant_id, {"seed": seed, "n_records": records}
        )
        click.echo(
            f"service on http://{addr}; run {run_id} underway, will park in "
            "AwaitDecision for the console"
        )
        uvicorn.run(app, host=host or "127.0.0.1", port=int(port or 8080))
        return
    cfg = RunConfig(noise=NoiseSpec(seed=seed), data_dir=data_dir, n_records=records)
    decision = AutoDecision("adopt" if auto_approve else "revert", 1.0)
    run = run_provisioning(plant, cfg, decision)
    payload = {
        "run_id": run.run_id,
        "state": run.state,
        "decision": run.decision,
        "total_min": run.elapsed_min,
        "timeline": run.timeline_dict(),
        "artifact_dir": str(Path(data_dir) / run.run_id),
    }
    click.echo(json.dumps(payload, indent=1))
    if run.state != "Done":
        raise RuntimeError(f"run ended in state {run.state}: {run.error}")


@main.command()
@click.option("--params", "params_path", required=True, type=click.Path(exists=True))
@click.option("--baseline", "baseline_path", type=click.Path(exists=True))
@click.option("--plant", "plant_path", required=True, type=click.Path(exists=True))
@click.option("--from", "from_db", default=12.0, show_default=True)
@click.option("--to", "to_db", default=20.0, show_default=True)
@click.option("--step", "step_db", default=0.5, show_default=True)
@click.option("--out", "out_path", default="sweep.csv", show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--json", "as_json", is_flag=True)
@handle_errors
def sweep(params_path, baseline_path, plant_path, from_db, to_db, step_db, out_path, seed, as_json):
    """Booster power sweep: measured vs predicted relative Q and errors."""
    from .provisioning import _sweep_csv, configure_transparency

    plant = load_plant(plant_path)
    params = ParameterSet.from_dict(json.loads(Path(params_path).read_text()))
    if baseline_path:
        baseline = ParameterSet.from_dict(json.loads(Path(baseline_path).read_text()))
    else:
        baseline = params
    cfg = RunConfig(
        noise=NoiseSpec(seed=seed),
        sweep_from_db=from_db,
        sweep_to_db=to_db,
        sweep_step_db=step_db,
    )
    settings = configure_transparency(params, cfg.comb, cfg.trx)
    rows = power_sweep(plant, params, baseline, settings, cfg)
    Path(out_path).write_text(_sweep_csv(rows))
    click.echo(f"wrote {out_path} ({len(rows)} rows)")


@main.command()
@click.option("--calibrated", "cal_path", required=True, type=click.Path(exists=True))
@click.option("--baseline", "base_path", required=True, type=click.Path(exists=True))
@click.option("--plant", "plant_path", required=True, type=click.Path(exists=True))
@click.option("--seed", default=0, show_default=True)
@click.option("--sigma-zero", is_flag=True)
@click.option("--json", "as_json", is_flag=True)
@handle_errors
def compare(cal_path, base_path, plant_path, seed, sigma_zero, as_json):
    """Sweep error statistics for two models against the same plant."""
    from .provisioning import configure_transparency

    plant = load_plant(plant_path)
    cal = ParameterSet.from_dict(json.loads(Path(cal_path).read_text()))
    base = ParameterSet.from_dict(json.loads(Path(base_path).read_text()))
    cfg = RunConfig(noise=NoiseSpec.zero(seed) if sigma_zero else NoiseSpec(seed=seed))
    settings = configure_transparency(cal, cfg.comb, cfg.trx)
    rows = power_sweep(plant, cal, base, settings, cfg)
    slots = plant.grid.trx_slots
    stats = {}
    for label in ("cal", "base"):
        q_err = np.array(
            [[r[f"dq_{label}_ch{s}_db"] for s in slots] for r in rows]
        )
        stats[label] = {
            "mean_abs_d_osnr_avg_db": float(
                np.mean([abs(r[f"d_osnr_avg_{label}_db"]) for r in rows])
            ),
            "mean_abs_d_psig_avg_db": float(
                np.mean([abs(r[f"d_psig_avg_{label}_db"]) for r in rows])
            ),
            "std_q_error_db": float(np.std(q_err.mean(axis=1))),
            "mean_abs_q_error_db": float(np.mean(np.abs(q_err))),
        }
    if as_json:
        click.echo(json.dumps(stats, indent=1))
    else:
        click.echo(f"{'metric':34s} {'calibrated':>12s} {'baseline':>12s}")
        for key in stats["cal"]:
            click.echo(f"{key:34s} {stats['cal'][key]:12.4f} {stats['base'][key]:12.4f}")


@main.command()
@click.option("--addr", default=None, help="host:port (default env OLS_TWIN_ADDR)")
@click.option("--data-dir", default=None)
@handle_errors
def serve(addr, data_dir, as_json=False):
    """Run the HTTP service."""
    from .service import main as service_main

    service_main(addr=addr, data_dir=data_dir or os.environ.get("OLS_TWIN_DATA"))


@main.command("example-plant")
def example_plant_cmd():
    """Print the path of the packaged example plant file."""
    click.echo(example_plant_path())


if __name__ == "__main__":
    main()
