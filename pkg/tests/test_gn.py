import math

import numpy as np
import pytest

from olstwin.elements import C_LIGHT, EdfaModel, FiberSpan, aeff_from_gamma, nli_psd_w_hz
from olstwin.gn import ParameterSet, gsnr_at_launch, nli_span, optimal_launch, predict
from olstwin.plant import propagate_true
from olstwin.propagation import EdfaSetting
from olstwin.spectral import FrequencyGrid, db_to_linear


def oracle_nli_psd(alpha_db_km, length_km, dispersion, gamma_w_km, p_ch_w, grid):
    """Brute-force double integral of the reference four-wave-mixing kernel.

    Evaluated at band center over the (f1, f2) square with the triple-PSD
    support; the inner axis is log-spaced so the narrow low-|f1*f2| ridge is
    resolved at every outer point.
    """
    a_p = alpha_db_km * math.log(10) / 10 / 1e3
    length = length_km * 1e3
    f_c = 0.5 * (grid.f_min + grid.f_max)
    lam = C_LIGHT / f_c
    b2 = abs(-dispersion * 1e-6 * lam**2 / (2 * math.pi * C_LIGHT))
    band = grid.n_channels * grid.channel_spacing
    psd0 = p_ch_w / grid.channel_spacing
    g = gamma_w_km / 1e3
    c = 4 * math.pi**2 * b2
    f1 = np.unique(
        np.concatenate(
            [np.logspace(1, math.log10(band / 2), 700),
             np.linspace(band / 2 / 1400, band / 2, 700)]
        )
    )
    f2 = np.unique(
        np.concatenate(
            [np.logspace(1, math.log10(band / 2), 2400),
             np.linspace(band / 2 / 2000, band / 2, 2000)]
        )
    )
    m1, m2 = np.meshgrid(f1, f2, indexing="ij")
    k = c * m1 * m2
    num = 1 - 2 * math.exp(-a_p * length) * np.cos(k * length) + math.exp(-2 * a_p * length)
    inner = np.trapezoid(num / (a_p**2 + k**2), f2, axis=1)
    return (16 / 27) * g**2 * psd0**3 * 4 * np.trapezoid(inner, f1)


GRID = FrequencyGrid(191.65e12, 100e9, 40)

TABLE_SPANS = [
    ("AAL1", 0.511364, 17.6, 17.94, 1.28),
    ("CL1", 0.177208, 51.86, 17.97, 1.16),
    ("CL2", 0.196895, 54.75, 17.35, 1.15),
    ("CL3", 0.217909, 54.75, 17.67, 1.10),
    ("AAL2", 0.165, 20.0, 16.71, 1.27),
]


def make_span(name, alpha, length, disp, gamma):
    return FiberSpan(name, length, [(GRID.f_mid, alpha)], disp, gamma, aeff_from_gamma(gamma))


@pytest.mark.parametrize("name,alpha,length,disp,gamma", TABLE_SPANS)
def test_closed_form_vs_double_integral(name, alpha, length, disp, gamma):
    span = make_span(name, alpha, length, disp, gamma)
    psd = np.full(GRID.n_channels, 1e-3 / GRID.channel_spacing)
    closed = nli_psd_w_hz(span, psd, GRID)[GRID.n_channels // 2]
    oracle = oracle_nli_psd(alpha, length, disp, gamma, 1e-3, GRID)
    assert abs(10 * math.log10(closed / oracle)) < 1.0


def test_zero_gamma_no_nli():
    span = FiberSpan("z", 80.0, [(GRID.f_mid, 0.2)], 16.7, 0.0, 0.0)
    psd = np.full(GRID.n_channels, 1e-14)
    assert np.all(nli_psd_w_hz(span, psd, GRID) == 0.0)


def test_cubic_power_law():
    span = make_span("s", 0.2, 80.0, 16.7, 1.3)
    psd = np.full(GRID.n_channels, 1e-14)
    one = nli_span(span, psd, GRID)
    eight = nli_span(span, 2 * psd, GRID)
    assert np.allclose(eight, 8.0 * one, rtol=1e-12)


def toy_params(gain=16.0, nf=5.0, gamma=1.3, alpha=0.2, length=80.0):
    span = make_span("S", alpha, length, 16.7, gamma)
    edfa = EdfaModel(
        "A", target_gain_db=gain, nf_curve=[(5, nf), (25, nf)],
        max_output_power_dbm=99.0, ripple_scale=0.0,
    )
    params = ParameterSet("toy", GRID, [span, edfa], ["carrier", "carrier"],
                          np.zeros(GRID.n_channels), "truth")
    return params, {"A": EdfaSetting(gain_db=gain)}


def test_gsnr_asymptotic_slopes_and_optimum():
    params, settings = toy_params()
    ch = GRID.n_channels // 2
    popt = optimal_launch(params, settings, channel=ch)
    pred = predict(params, db_to_linear(np.full(GRID.n_channels, popt)), settings)
    rx = pred.traces[-1].state
    ase_rs = rx.ase_mw[ch] * GRID.symbol_rate / GRID.ref_bandwidth
    assert abs(10 * math.log10(ase_rs / (2 * rx.nli_mw[ch]))) <= 0.05
    h = 0.1
    for off, want in ((-25.0, 1.0), (25.0, -2.0)):
        s = (
            gsnr_at_launch(params, settings, ch, popt + off + h)
            - gsnr_at_launch(params, settings, ch, popt + off - h)
        ) / (2 * h)
        assert s == pytest.approx(want, abs=0.05)


def test_optimum_is_ceiling_in_linear_regime():
    span = FiberSpan("S", 80.0, [(GRID.f_mid, 0.2)], 16.7, 0.0, 0.0)
    edfa = EdfaModel("A", target_gain_db=16.0, nf_curve=[(5, 5.0), (25, 5.0)],
                     max_output_power_dbm=99.0, ripple_scale=0.0)
    params = ParameterSet("lin", GRID, [span, edfa], ["carrier", "carrier"],
                          np.zeros(GRID.n_channels), "truth")
    settings = {"A": EdfaSetting(gain_db=16.0)}
    popt = optimal_launch(params, settings, lo_dbm=-10, hi_dbm=5.0)
    assert popt == pytest.approx(5.0, abs=0.51)  # monotone: optimum at the ceiling


def test_sweep_granularity_matches_design():
    gains = np.arange(12.0, 20.0 + 0.25, 0.5)
    assert len(gains) == 17


def test_incoherent_accumulation_ase_regime():
    def gsnr_n(n):
        elements, tags = [], []
        for i in range(n):
            elements.append(make_span(f"S{i}", 0.2, 80.0, 16.7, 1.3))
            elements.append(
                EdfaModel(f"A{i}", target_gain_db=16.0, nf_curve=[(5, 5.0), (25, 5.0)],
                          max_output_power_dbm=99.0, ripple_scale=0.0)
            )
            tags += ["carrier", "carrier"]
        params = ParameterSet("n", GRID, elements, tags, np.zeros(GRID.n_channels), "truth")
        settings = {f"A{i}": EdfaSetting(gain_db=16.0) for i in range(n)}
        launch = db_to_linear(np.full(GRID.n_channels, -30.0))
        return float(predict(params, launch, settings).gsnr.values[GRID.n_channels // 2])

    assert gsnr_n(1) - gsnr_n(4) == pytest.approx(10 * math.log10(4), abs=0.05)


def test_predict_matches_plant_truth_exactly(plant, truth_params, operating_settings, comb):
    launch = comb.tx_signal_mw(plant.grid)
    traces = propagate_true(plant, launch, operating_settings)
    pred = predict(truth_params, launch, operating_settings)
    rx = traces[-1].state
    prx = pred.traces[-1].state
    assert np.array_equal(rx.signal_mw, prx.signal_mw)
    assert np.array_equal(rx.ase_mw, prx.ase_mw)
    assert np.array_equal(rx.nli_mw, prx.nli_mw)


def test_gsnr_inverse_additivity(plant, truth_params, operating_settings, comb):
    pred = predict(truth_params, comb.tx_signal_mw(plant.grid), operating_settings)
    assert pred.check_consistency() < 1e-9
    finite = np.isfinite(pred.snr_nli.values)
    assert np.all(pred.gsnr.values[finite] <= pred.snr_nli.values[finite] + 1e-9)


def test_zero_gamma_inf_sentinel():
    params, settings = toy_params()
    params.elements[0].gamma_w_km = 0.0
    params.elements[0].a_eff_um2 = 0.0
    pred = predict(params, db_to_linear(np.zeros(GRID.n_channels)), settings)
    assert np.all(np.isinf(pred.snr_nli.values))
    conv = 10 * np.log10(GRID.ref_bandwidth / GRID.symbol_rate)
    assert np.allclose(pred.gsnr.values, pred.osnr.values + conv, atol=1e-9)


def test_nf_extrapolation_clamps():
    params, settings = toy_params()
    edfa = params.elements[1]
    assert edfa.nf_db(-10.0) == edfa.nf_db(5.0)
    assert edfa.nf_db(60.0) == edfa.nf_db(25.0)


def test_received_power_regression(plant, truth_params, operating_settings, comb):
    # frozen on the first validated run; guards against model drift
    pred = predict(truth_params, comb.tx_signal_mw(plant.grid), operating_settings)
    valid = [s for s in range(plant.grid.n_channels) if s not in comb.blocked_slots]
    avg = float(np.mean(pred.p_sig.values[valid]))
    assert avg == pytest.approx(-8.605711, abs=2e-3)
