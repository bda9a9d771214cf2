"""Ground-truth simulated optical line and its telemetry.

The plant owns the hidden true parameters and produces every stream the
estimation pipeline is allowed to see: edge spectra, per-amplifier
photodiode totals, hole-based OSNR, and the longitudinal monitoring profile.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, replace

import numpy as np
from scipy.ndimage import gaussian_filter1d

from .dlm import DlmProfile
from .elements import EdfaModel, FiberSpan
from .propagation import EdfaSetting, ElementTrace, propagate
from .spectral import FrequencyGrid, SpectralProfile, db_to_linear, linear_to_db


@dataclass
class NoiseSpec:
    """Measurement-noise model; all sigmas in dB. Deterministic per seed."""

    sigma_spectrum_db: float = 0.1
    sigma_photodiode_db: float = 0.05
    sigma_dlm_db: float = 0.15
    sigma_q_db: float = 0.03
    seed: int = 0

    @classmethod
    def zero(cls, seed: int = 0) -> "NoiseSpec":
        return cls(0.0, 0.0, 0.0, 0.0, seed)

    def rng(self, *context) -> np.random.Generator:
        """Independent stream per (seed, context) pair, stable across runs."""
        key = ":".join(str(c) for c in (self.seed,) + context)
        digest = hashlib.sha256(key.encode()).digest()
        return np.random.default_rng(int.from_bytes(digest[:8], "little"))


@dataclass
class CombSource:
    """Flattened broadband source shaped by a blocker stage.

    Per-slot emitted power is ``ase_psd_dbm_per_slot`` minus the per-slot
    attenuation; ``blocked_slots`` emit nothing and serve as the spectral
    holes used for in-band noise-floor (OSNR) measurement.
    """

    ase_psd_dbm_per_slot: float = -13.0
    wss_attenuation: np.ndarray | float = 3.0
    blocked_slots: tuple = (2, 9, 16, 23, 30, 37)

    def tx_signal_mw(self, grid: FrequencyGrid) -> np.ndarray:
        att = np.broadcast_to(
            np.asarray(self.wss_attenuation, dtype=float), (grid.n_channels,)
        ).copy()
        if np.any(att < 0):
            raise ValueError("attenuation must be >= 0")
        sig = db_to_linear(self.ase_psd_dbm_per_slot - att)
        sig[list(self.blocked_slots)] = 0.0
        return sig

    def to_dict(self):
        att = np.broadcast_to(np.asarray(self.wss_attenuation, dtype=float), (1,))
        return {
            "ase_psd_dbm_per_slot": self.ase_psd_dbm_per_slot,
            "wss_attenuation": np.asarray(self.wss_attenuation, dtype=float).tolist(),
            "blocked_slots": list(self.blocked_slots),
        }


@dataclass
class TelemetryRecord:
    """One measurement: settings echo, photodiode totals, edge spectra."""

    settings: dict  # edfa_id -> EdfaSetting
    edfa_pin_dbm: dict
    edfa_pout_dbm: dict
    tx_spectrum: SpectralProfile
    rx_spectrum: SpectralProfile
    rx_osnr: SpectralProfile
    noise_seed: int = 0
    saturated_edfas: tuple = ()

    def to_dict(self):
        return {
            "settings": {k: v.to_dict() for k, v in self.settings.items()},
            "edfa_pin_dbm": dict(self.edfa_pin_dbm),
            "edfa_pout_dbm": dict(self.edfa_pout_dbm),
            "tx_spectrum_dbm": self.tx_spectrum.values.tolist(),
            "rx_spectrum_dbm": self.rx_spectrum.values.tolist(),
            "rx_osnr_db": self.rx_osnr.values.tolist(),
            "noise_seed": self.noise_seed,
            "saturated_edfas": list(self.saturated_edfas),
        }


@dataclass
class OpticalLinePlant:
    """Ordered amplifier/fiber chain with a line-shared intrinsic ripple."""

    name: str
    grid: FrequencyGrid
    elements: list
    segment_tags: list  # parallel to elements: "AAL1" | "carrier" | "AAL2"
    shared_ripple_db: np.ndarray
    dlm_setpoint_dbm: float = 12.0

    def __post_init__(self):
        self.shared_ripple_db = np.asarray(self.shared_ripple_db, dtype=float)
        if len(self.shared_ripple_db) != self.grid.n_channels:
            raise ValueError("shared ripple length must match the grid")
        if abs(float(np.mean(self.shared_ripple_db))) > 1e-9:
            raise ValueError("shared ripple must have zero mean")
        if len(self.segment_tags) != len(self.elements):
            raise ValueError("segment tags must parallel elements")

    def spans(self) -> list:
        return [e for e in self.elements if isinstance(e, FiberSpan)]

    def edfas(self) -> list:
        return [e for e in self.elements if isinstance(e, EdfaModel)]

    def carrier_slice(self) -> slice:
        idx = [i for i, t in enumerate(self.segment_tags) if t == "carrier"]
        if not idx:
            raise ValueError("plant has no carrier segment")
        return slice(idx[0], idx[-1] + 1)

    def carrier_elements(self) -> list:
        return self.elements[self.carrier_slice()]

    def feeding_edfa(self, span: FiberSpan) -> EdfaModel | None:
        """Nearest amplifier upstream of the span (None if fed by the edge)."""
        i = self.elements.index(span)
        for el in reversed(self.elements[:i]):
            if isinstance(el, EdfaModel):
                return el
        return None


def make_shared_ripple(
    grid: FrequencyGrid, peak_to_peak_db: float = 1.0, seed: int = 7, components: int = 3
) -> np.ndarray:
    """Zero-mean sum of a few sinusoids across the band, fixed by seed."""
    rng = np.random.default_rng(seed)
    x = np.linspace(0.0, 1.0, grid.n_channels)
    r = np.zeros_like(x)
    for _ in range(components):
        r += rng.uniform(0.3, 1.0) * np.sin(
            2.0 * np.pi * rng.uniform(0.8, 3.0) * x + rng.uniform(0, 2 * np.pi)
        )
    r -= np.mean(r)
    span = np.ptp(r)
    if span > 0:
        r *= peak_to_peak_db / span
    r -= np.mean(r)
    return r


def propagate_true(
    plant: OpticalLinePlant,
    launch_signal_mw,
    settings: dict | None = None,
    scope: slice | None = None,
    with_nli: bool = True,
) -> list[ElementTrace]:
    """Forward model with the plant's hidden true parameters."""
    elements = plant.elements if scope is None else plant.elements[scope]
    return propagate(
        elements,
        plant.grid,
        launch_signal_mw,
        settings=settings,
        shared_ripple_db=plant.shared_ripple_db,
        with_nli=with_nli,
    )


def osnr_from_spectra(
    total_mw: np.ndarray, blocked_slots, grid: FrequencyGrid
) -> np.ndarray:
    """Hole-based OSNR estimate per slot [dB]; NaN at the holes themselves.

    The in-hole floor is pure accumulated noise; between holes the floor is
    interpolated in dB and subtracted from the slot total.
    """
    holes = sorted(blocked_slots)
    slots = np.arange(grid.n_channels)
    floor_db = linear_to_db(np.maximum(total_mw[holes], 1e-30))
    interp_floor = np.interp(slots, holes, floor_db)
    noise_mw = db_to_linear(interp_floor)
    sig_mw = np.maximum(total_mw - noise_mw, 1e-30)
    osnr = 10.0 * np.log10(sig_mw / noise_mw)
    osnr[list(holes)] = np.nan
    return osnr


def measure(
    plant: OpticalLinePlant,
    comb: CombSource,
    settings: dict,
    noise: NoiseSpec | None = None,
    record_index: int = 0,
    scope: str = "carrier",
) -> TelemetryRecord:
    """One calibration-style measurement through the carrier link.

    The comb is injected at the first carrier amplifier; the receive-side
    spectrum is taken at the last carrier amplifier's output port. Spectra
    and photodiode totals carry additive Gaussian dB noise per ``noise``.
    """
    noise = noise or NoiseSpec.zero()
    rng = noise.rng("measure", scope, record_index)
    grid = plant.grid
    sel = plant.carrier_slice() if scope == "carrier" else slice(None)
    tx_mw = comb.tx_signal_mw(grid)
    traces = propagate_true(plant, tx_mw, settings, scope=sel)

    def jitter(arr, sigma):
        if sigma <= 0:
            return np.asarray(arr, dtype=float)
        return np.asarray(arr, dtype=float) + rng.normal(0.0, sigma, np.shape(arr))

    pin, pout, saturated = {}, {}, []
    for tr in traces:
        if tr.kind == "edfa":
            pin[tr.element_id] = float(jitter(tr.pin_dbm, noise.sigma_photodiode_db))
            pout[tr.element_id] = float(jitter(tr.pout_dbm, noise.sigma_photodiode_db))
            if tr.saturated:
                saturated.append(tr.element_id)

    rx_state = traces[-1].state
    rx_total_mw = rx_state.signal_mw + rx_state.ase_mw + rx_state.nli_mw
    tx_dbm = linear_to_db(np.maximum(tx_mw, 1e-30))
    rx_dbm = jitter(linear_to_db(np.maximum(rx_total_mw, 1e-30)), noise.sigma_spectrum_db)
    osnr = osnr_from_spectra(db_to_linear(rx_dbm), comb.blocked_slots, grid)

    return TelemetryRecord(
        settings={k: replace(v) for k, v in settings.items()},
        edfa_pin_dbm=pin,
        edfa_pout_dbm=pout,
        tx_spectrum=SpectralProfile(grid, tx_dbm, "dBm"),
        rx_spectrum=SpectralProfile(grid, rx_dbm, "dBm"),
        rx_osnr=SpectralProfile(grid, osnr, "dB"),
        noise_seed=noise.seed,
        saturated_edfas=tuple(saturated),
    )


def _dlm_event_walk(plant: OpticalLinePlant, launch_dbm: float):
    """True (gamma*P) piecewise description along the line in monitor mode.

    Every amplifier runs constant-power at the monitor setpoint, so each
    span launches at (setpoint - downstream pad). Returns per-span tuples
    (z_start, length, alpha_dlm, level0_db, events) where events are
    (z_abs, drop_db) and level0 is gamma*P just before the input connector.
    """
    f_dlm = plant.grid.dlm_frequency
    spans = []
    z = 0.0
    power_dbm = launch_dbm  # power entering the next fiber
    for i, el in enumerate(plant.elements):
        if isinstance(el, EdfaModel):
            power_dbm = plant.dlm_setpoint_dbm - el.output_pad_db
            continue
        span: FiberSpan = el
        alpha = float(span.alpha_db_km(f_dlm))
        gamma_db = 10.0 * np.log10(span.gamma_w_km * 1e-3)  # P tracked in mW
        level0 = gamma_db + power_dbm
        events = []
        z_in = z + min(span.connector_standoff_km, 0.45 * span.length_km)
        z_out = z + span.length_km - min(span.connector_standoff_km, 0.45 * span.length_km)
        if span.in_connector_db > 0:
            events.append((z_in, span.in_connector_db))
        for pos, db in span.lumped_losses:
            events.append((z + pos, db))
        if span.out_connector_db > 0:
            events.append((z_out, span.out_connector_db))
        events.sort()
        spans.append((z, span.length_km, alpha, level0, events))
        z += span.length_km
        power_dbm = power_dbm - float(span.total_loss_db(f_dlm))
    return spans


def true_dlm_profile(
    plant: OpticalLinePlant, z_km: np.ndarray, launch_dbm: float | None = None
) -> np.ndarray:
    """Noiseless, unblurred gamma(z)P(z) [dB] sampled at ``z_km``."""
    launch = plant.dlm_setpoint_dbm if launch_dbm is None else launch_dbm
    out = np.full(len(z_km), np.nan)
    for z0, length, alpha, level0, events in _dlm_event_walk(plant, launch):
        mask = (z_km >= z0 - 1e-9) & (z_km <= z0 + length + 1e-9)
        zz = z_km[mask]
        vals = level0 - alpha * (zz - z0)
        for ze, drop in events:
            vals = vals - drop * (zz >= ze)
        out[mask] = vals
    return out


def dlm_measure(
    plant: OpticalLinePlant,
    dlm_power_dbm: float | None = None,
    noise: NoiseSpec | None = None,
    z_step_km: float = 0.2,
    resolution_km: float = 1.0,
    cd_jitter_ps_nm_km: float = 0.05,
) -> DlmProfile:
    """Longitudinal monitor measurement over the end-to-end path.

    Amplifiers are forced to constant output power at the monitor setpoint.
    The true profile is blurred by a Gaussian spatial-resolution kernel and
    then perturbed with additive white dB noise.
    """
    noise = noise or NoiseSpec.zero()
    rng = noise.rng("dlm")
    total = sum(s.length_km for s in plant.spans())
    z = np.arange(int(np.floor(total / z_step_km)) + 1) * z_step_km
    truth = true_dlm_profile(plant, z, dlm_power_dbm)
    blurred = gaussian_filter1d(truth, resolution_km / z_step_km, mode="nearest")
    if noise.sigma_dlm_db > 0:
        blurred = blurred + rng.normal(0.0, noise.sigma_dlm_db, blurred.shape)
    cds = [
        s.dispersion_ps_nm_km
        + (rng.normal(0.0, cd_jitter_ps_nm_km) if cd_jitter_ps_nm_km > 0 else 0.0)
        for s in plant.spans()
    ]
    return DlmProfile(z, blurred, resolution_km, span_cd_ps_nm_km=cds)
