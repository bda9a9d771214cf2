import json
from pathlib import Path

import pytest
from click.testing import CliRunner

from olstwin.cli import main
from olstwin.gn import ParameterSet
from olstwin.plantio import example_plant, example_plant_path


@pytest.fixture(scope="module")
def runner():
    return CliRunner()


@pytest.fixture(scope="module")
def truth_params_file(tmp_path_factory):
    plant = example_plant()
    path = tmp_path_factory.mktemp("params") / "truth.json"
    path.write_text(json.dumps(ParameterSet.from_plant(plant).to_dict()))
    return str(path)


def test_example_plant_cmd(runner):
    result = runner.invoke(main, ["example-plant"])
    assert result.exit_code == 0
    assert result.output.strip().endswith(".plant")


def test_simulate(runner, tmp_path):
    out = tmp_path / "sim"
    result = runner.invoke(
        main, ["simulate", "--plant", example_plant_path(), "--out", str(out)]
    )
    assert result.exit_code == 0, result.output
    telemetry = json.loads((out / "telemetry.json").read_text())
    prediction = json.loads((out / "prediction.json").read_text())
    assert len(telemetry["rx_spectrum_dbm"]) == 40
    assert len(prediction["gsnr_db"]) == 40


def test_dlm_command(runner, tmp_path):
    out = tmp_path / "dataset1.json"
    result = runner.invoke(
        main, ["dlm", "--plant", example_plant_path(), "--out", str(out)]
    )
    assert result.exit_code == 0, result.output
    doc = json.loads(out.read_text())
    assert len(doc["extract"]["spans"]) == 5
    assert len(doc["extract"]["edfa_positions_km"]) == 4


def test_provision_auto_approve_timeline(runner, tmp_path):
    result = runner.invoke(
        main,
        [
            "provision", "--plant", example_plant_path(), "--auto-approve",
            "--data-dir", str(tmp_path / "runs"), "--records", "16", "--seed", "3",
        ],
    )
    assert result.exit_code == 0, result.output
    payload = json.loads(result.output[result.output.index("{"):])
    assert payload["state"] == "Done"
    assert payload["total_min"] == pytest.approx(60.0)
    run_dir = Path(payload["artifact_dir"])
    assert (run_dir / "sweep.csv").exists()
    assert (run_dir / "params.json").exists()


def test_sweep_emits_17_rows(runner, tmp_path, truth_params_file):
    out = tmp_path / "sweep.csv"
    result = runner.invoke(
        main,
        [
            "sweep", "--params", truth_params_file, "--plant", example_plant_path(),
            "--from", "12", "--to", "20", "--step", "0.5", "--out", str(out),
        ],
    )
    assert result.exit_code == 0, result.output
    lines = [ln for ln in out.read_text().splitlines() if ln.strip()]
    assert len(lines) == 18  # header + 17 points
    header = lines[0].split(",")
    assert "booster_gain_db" in header
    assert any(c.startswith("q_meas_ch") for c in header)
    assert any(c.startswith("dq_cal_ch") for c in header)


def test_compare_truth_vs_truth_zero(runner, truth_params_file):
    result = runner.invoke(
        main,
        [
            "compare", "--calibrated", truth_params_file, "--baseline",
            truth_params_file, "--plant", example_plant_path(),
            "--sigma-zero", "--json",
        ],
    )
    assert result.exit_code == 0, result.output
    stats = json.loads(result.output[result.output.index("{"):])
    for label in ("cal", "base"):
        assert stats[label]["mean_abs_d_osnr_avg_db"] == pytest.approx(0.0, abs=1e-9)
        assert stats[label]["mean_abs_d_psig_avg_db"] == pytest.approx(0.0, abs=1e-9)
        assert stats[label]["std_q_error_db"] == pytest.approx(0.0, abs=1e-9)
        assert stats[label]["mean_abs_q_error_db"] == pytest.approx(0.0, abs=1e-9)


def test_json_error_envelope(runner, tmp_path):
    missing = str(tmp_path / "nope.plant")
    result = runner.invoke(main, ["dlm", "--plant", missing, "--json"])
    assert result.exit_code != 0
    # click validates path existence before the command body runs
    result2 = runner.invoke(
        main, ["sweep", "--params", missing, "--plant", missing, "--json"]
    )
    assert result2.exit_code != 0


def test_json_error_envelope_runtime(runner, tmp_path):
    bad = tmp_path / "bad.plant"
    bad.write_text("name: x\nelements: []\n")
    result = runner.invoke(main, ["dlm", "--plant", str(bad), "--json"])
    assert result.exit_code == 1
    err = json.loads(result.stderr.strip().splitlines()[-1])
    assert err["error"] == "PlantFormatError"
    assert "message" in err


def test_calibrate_command(runner, tmp_path):
    out = tmp_path / "dataset2.json"
    result = runner.invoke(
        main,
        [
            "calibrate", "--plant", example_plant_path(), "--records", "12",
            "--sigma-zero", "--out", str(out),
        ],
    )
    assert result.exit_code == 0, result.output
    doc = json.loads(out.read_text())
    assert set(doc["connectors"]) == {"CL1", "CL2", "CL3"}
    assert doc["converged"] is True
    params = json.loads((tmp_path / "params.json").read_text())
    assert params["provenance"] == "calibrated"
