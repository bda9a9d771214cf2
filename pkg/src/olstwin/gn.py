"""Forward QoT estimator: per-channel signal, OSNR, NLI and GSNR.

Runs the same propagation core as the ground-truth plant but on an
*estimated* parameter set; nonlinear interference accumulates incoherently
span by span, each span's contribution riding to the receiver under the same
gains and losses as the signal.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .elements import EdfaModel, FiberSpan, nli_psd_w_hz
from .plant import OpticalLinePlant
from .propagation import propagate
from .spectral import FrequencyGrid, SpectralProfile, db_to_linear, linear_to_db


@dataclass
class ParameterSet:
    """Estimated (or true, or baseline-assumed) line parameters."""

    name: str
    grid: FrequencyGrid
    elements: list
    segment_tags: list
    shared_ripple_db: np.ndarray
    provenance: str = "baseline"  # baseline | calibrated | truth
    notes: list = field(default_factory=list)

    def __post_init__(self):
        if self.provenance not in ("baseline", "calibrated", "truth"):
            raise ValueError(f"unknown provenance {self.provenance!r}")
        self.shared_ripple_db = np.asarray(self.shared_ripple_db, dtype=float)

    def spans(self) -> list:
        return [e for e in self.elements if isinstance(e, FiberSpan)]

    def edfas(self) -> list:
        return [e for e in self.elements if isinstance(e, EdfaModel)]

    def as_line(self) -> OpticalLinePlant:
        """View the parameter set as a line the forward model can run."""
        return OpticalLinePlant(
            name=f"{self.name}[{self.provenance}]",
            grid=self.grid,
            elements=self.elements,
            segment_tags=self.segment_tags,
            shared_ripple_db=self.shared_ripple_db - np.mean(self.shared_ripple_db),
        )

    @classmethod
    def from_plant(cls, plant: OpticalLinePlant, provenance: str = "truth") -> "ParameterSet":
        return cls(
            name=plant.name,
            grid=plant.grid,
            elements=plant.elements,
            segment_tags=list(plant.segment_tags),
            shared_ripple_db=plant.shared_ripple_db.copy(),
            provenance=provenance,
        )

    def to_dict(self):
        return {
            "name": self.name,
            "provenance": self.provenance,
            "grid": {
                "f_center_first": self.grid.f_center_first,
                "channel_spacing": self.grid.channel_spacing,
                "n_channels": self.grid.n_channels,
                "ref_bandwidth": self.grid.ref_bandwidth,
                "symbol_rate": self.grid.symbol_rate,
                "dlm_slots": list(self.grid.dlm_slots),
                "trx_slots": list(self.grid.trx_slots),
            },
            "elements": [e.to_dict() for e in self.elements],
            "segment_tags": list(self.segment_tags),
            "shared_ripple_db": self.shared_ripple_db.tolist(),
            "notes": list(self.notes),
        }

    @classmethod
    def from_dict(cls, d) -> "ParameterSet":
        g = d["grid"]
        grid = FrequencyGrid(
            f_center_first=g["f_center_first"],
            channel_spacing=g["channel_spacing"],
            n_channels=g["n_channels"],
            ref_bandwidth=g.get("ref_bandwidth", 12.5e9),
            symbol_rate=g.get("symbol_rate", 64e9),
            dlm_slots=tuple(g.get("dlm_slots", (0, 1))),
            trx_slots=tuple(g.get("trx_slots", (5, 15, 25, 35))),
        )
        elements = [
            FiberSpan.from_dict(e) if e.get("type") == "fiber" else EdfaModel.from_dict(e)
            for e in d["elements"]
        ]
        return cls(
            name=d.get("name", "params"),
            grid=grid,
            elements=elements,
            segment_tags=list(d["segment_tags"]),
            shared_ripple_db=np.asarray(d["shared_ripple_db"], dtype=float),
            provenance=d.get("provenance", "baseline"),
            notes=list(d.get("notes", [])),
        )


@dataclass
class QotPrediction:
    """Per-channel prediction at the receive edge."""

    p_sig: SpectralProfile  # dBm
    osnr: SpectralProfile  # dB, in the reference bandwidth
    snr_nli: SpectralProfile  # dB, in the symbol-rate bandwidth
    gsnr: SpectralProfile  # dB, in the symbol-rate bandwidth
    traces: list = field(default_factory=list, repr=False)
    saturated_edfas: tuple = ()

    def check_consistency(self, tol: float = 1e-9) -> float:
        """Max |GSNR^-1 - (SNR_ASE^-1 + SNR_NLI^-1)| in linear units."""
        bref_rs = self.p_sig.grid.ref_bandwidth / self.p_sig.grid.symbol_rate
        inv_ase = db_to_linear(-(self.osnr.values + 10 * np.log10(bref_rs)))
        inv_nli = np.where(
            np.isfinite(self.snr_nli.values), db_to_linear(-self.snr_nli.values), 0.0
        )
        inv_gsnr = db_to_linear(-self.gsnr.values)
        return float(np.nanmax(np.abs(inv_gsnr - (inv_ase + inv_nli))))


def predict(
    params: ParameterSet,
    launch: SpectralProfile | np.ndarray,
    settings: dict | None = None,
    scope: slice | None = None,
) -> QotPrediction:
    """Propagate the launch spectrum through the estimated line."""
    grid = params.grid
    if isinstance(launch, SpectralProfile):
        launch_mw = launch.to_linear().values
    else:
        launch_mw = np.asarray(launch, dtype=float)
    elements = params.elements if scope is None else params.elements[scope]
    traces = propagate(
        elements,
        grid,
        launch_mw,
        settings=settings,
        shared_ripple_db=params.shared_ripple_db,
        with_nli=True,
    )
    rx = traces[-1].state
    sig = np.maximum(rx.signal_mw, 1e-300)
    with np.errstate(divide="ignore"):
        osnr_db = 10.0 * np.log10(np.where(rx.ase_mw > 0, sig / np.maximum(rx.ase_mw, 1e-300), np.inf))
        snr_nli_db = 10.0 * np.log10(np.where(rx.nli_mw > 0, sig / np.maximum(rx.nli_mw, 1e-300), np.inf))
    bref_rs_db = 10.0 * np.log10(grid.ref_bandwidth / grid.symbol_rate)
    inv = db_to_linear(-(osnr_db + bref_rs_db)) + np.where(
        np.isfinite(snr_nli_db), db_to_linear(-snr_nli_db), 0.0
    )
    with np.errstate(divide="ignore"):
        gsnr_db = -10.0 * np.log10(inv)
    saturated = tuple(t.element_id for t in traces if t.kind == "edfa" and t.saturated)
    return QotPrediction(
        p_sig=SpectralProfile(grid, linear_to_db(sig), "dBm"),
        osnr=SpectralProfile(grid, osnr_db, "dB"),
        snr_nli=SpectralProfile(grid, snr_nli_db, "dB"),
        gsnr=SpectralProfile(grid, gsnr_db, "dB"),
        traces=traces,
        saturated_edfas=saturated,
    )


def nli_span(span: FiberSpan, psd_w_hz, grid: FrequencyGrid) -> np.ndarray:
    """Per-channel NLI power [W] generated by one span at the given launch PSD."""
    return nli_psd_w_hz(span, np.asarray(psd_w_hz, dtype=float), grid) * grid.symbol_rate


def gsnr_at_launch(
    params: ParameterSet, settings: dict | None, channel: int, launch_dbm_per_slot: float
) -> float:
    launch = db_to_linear(np.full(params.grid.n_channels, launch_dbm_per_slot))
    pred = predict(params, launch, settings)
    return float(pred.gsnr.values[channel])


def optimal_launch(
    params: ParameterSet,
    settings: dict | None = None,
    channel: int | None = None,
    lo_dbm: float = -25.0,
    hi_dbm: float = 15.0,
    coarse_step_db: float = 0.5,
    tol_db: float = 0.005,
) -> float:
    """Flat per-slot launch power [dBm] maximizing the reference channel GSNR.

    At the optimum the accumulated ASE power is twice the accumulated NLI
    power. A non-unimodal numeric profile falls back to the grid argmax.
    """
    grid = params.grid
    if channel is None:
        channel = grid.trx_slots[len(grid.trx_slots) // 2] if grid.trx_slots else grid.n_channels // 2
    powers = np.arange(lo_dbm, hi_dbm + coarse_step_db / 2, coarse_step_db)
    vals = np.array([gsnr_at_launch(params, settings, channel, p) for p in powers])
    k = int(np.argmax(vals))
    interior = vals[1:-1]
    peaks = np.sum(
        (interior > vals[:-2]) & (interior >= vals[2:])
    )
    if peaks > 1:
        warnings.warn("GSNR-vs-power profile is not unimodal; returning grid argmax")
        return float(powers[k])
    lo = powers[max(k - 1, 0)]
    hi = powers[min(k + 1, len(powers) - 1)]
    while hi - lo > tol_db:
        m1 = lo + (hi - lo) / 3
        m2 = hi - (hi - lo) / 3
        if gsnr_at_launch(params, settings, channel, m1) < gsnr_at_launch(
            params, settings, channel, m2
        ):
            lo = m1
        else:
            hi = m2
    return float(0.5 * (lo + hi))
