"""Shared fixtures; the expensive calibration pipelines run once per session."""

import numpy as np
import pytest

from olstwin import calib as calib_mod
from olstwin import dlm as dlm_mod
from olstwin.gn import ParameterSet
from olstwin.plant import CombSource, NoiseSpec, dlm_measure, measure
from olstwin.plantio import example_plant
from olstwin.propagation import EdfaSetting
from olstwin.provisioning import AutoDecision, RunConfig, run_provisioning
from olstwin.spectral import linear_to_db


@pytest.fixture(scope="session")
def plant():
    return example_plant()


@pytest.fixture(scope="session")
def comb():
    return CombSource()


@pytest.fixture(scope="session")
def truth_params(plant):
    return ParameterSet.from_plant(plant)


@pytest.fixture(scope="session")
def operating_settings():
    return {
        "AAL1-PRE": EdfaSetting(power_dbm=13.0),
        "CL-BST": EdfaSetting(gain_db=19.0),
        "CL-ILA1": EdfaSetting(gain_db=15.7),
        "CL-ILA2": EdfaSetting(gain_db=16.8),
        "CL-PRE": EdfaSetting(gain_db=16.4),
        "AAL2-BST": EdfaSetting(power_dbm=12.0),
    }


def _build_baseline(plant, comb, noise, settings):
    probe = measure(plant, comb, settings, noise=noise, record_index=9_999, scope="ete")
    pd_totals = {
        eid: (probe.edfa_pin_dbm[eid], probe.edfa_pout_dbm[eid])
        for eid in probe.edfa_pin_dbm
    }
    tx_tot = float(linear_to_db(np.sum(probe.tx_spectrum.to_linear().values)))
    rx_tot = float(linear_to_db(np.sum(probe.rx_spectrum.to_linear().values)))
    return calib_mod.build_baseline(
        calib_mod.line_inventory(plant), pd_totals, tx_total_dbm=tx_tot, rx_total_dbm=rx_tot
    )


@pytest.fixture(scope="session")
def zero_noise_calibration(plant, comb, operating_settings):
    """Noise-free dataset, extraction, baseline and full calibration."""
    noise = NoiseSpec.zero()
    ids = ["CL-BST", "CL-ILA1", "CL-ILA2", "CL-PRE"]
    plan = calib_mod.make_sweep_plan(ids, {eid: 16.0 for eid in ids}, n_records=58)
    dataset = calib_mod.collect_dataset(plant, comb, plan, noise=noise)
    extract = dlm_mod.extract(
        dlm_measure(plant, noise=noise), [s.length_km for s in plant.spans()]
    )
    baseline = _build_baseline(plant, comb, noise, operating_settings)
    result = calib_mod.calibrate(dataset, extract, baseline)
    merged = calib_mod.merge(extract, result, dlm_launch_dbm=plant.dlm_setpoint_dbm)
    return {
        "dataset": dataset,
        "extract": extract,
        "baseline": baseline,
        "result": result,
        "merged": merged,
        "noise": noise,
    }


@pytest.fixture(scope="session")
def full_run(plant, tmp_path_factory):
    """Default-noise end-to-end provisioning run with real computations."""
    data_dir = tmp_path_factory.mktemp("runs")
    cfg = RunConfig(noise=NoiseSpec(seed=5), data_dir=str(data_dir))
    run = run_provisioning(plant, cfg, AutoDecision("adopt", 1.0))
    assert run.state == "Done", run.error
    return {"run": run, "config": cfg, "data_dir": data_dir}
