"""Shared forward model: propagate signal/ASE/NLI streams through a line.

Both the ground-truth plant and the estimator-facing prediction engine run
exactly this code; they differ only in which parameter records they feed it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .elements import EdfaModel, FiberSpan, ase_floor_dbm, nli_psd_w_hz
from .spectral import FrequencyGrid, db_to_linear


@dataclass
class EdfaSetting:
    """Operational request for one amplifier.

    ``gain_db`` drives AGC mode; ``power_dbm`` (total at the module output
    port) drives constant-power mode. Exactly one should be set; ``tilt_db``
    applies in either mode.
    """

    gain_db: float | None = None
    tilt_db: float = 0.0
    power_dbm: float | None = None

    def to_dict(self):
        return {"gain_db": self.gain_db, "tilt_db": self.tilt_db, "power_dbm": self.power_dbm}

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class StreamState:
    """Per-slot powers [mW] of the three tracked streams.

    ``ase_by_source`` optionally decomposes the ASE stream per originating
    amplifier (kept consistent by construction: every scale hits it too).
    """

    signal_mw: np.ndarray
    ase_mw: np.ndarray
    nli_mw: np.ndarray
    ase_by_source: dict | None = None

    @classmethod
    def launch(cls, signal_mw, track_ase_sources: bool = False) -> "StreamState":
        sig = np.array(signal_mw, dtype=float)
        return cls(
            sig, np.zeros_like(sig), np.zeros_like(sig),
            {} if track_ase_sources else None,
        )

    def copy(self) -> "StreamState":
        return StreamState(
            self.signal_mw.copy(), self.ase_mw.copy(), self.nli_mw.copy(),
            None if self.ase_by_source is None
            else {k: v.copy() for k, v in self.ase_by_source.items()},
        )

    def scale_db(self, db_profile) -> None:
        g = db_to_linear(db_profile)
        self.signal_mw *= g
        self.ase_mw *= g
        self.nli_mw *= g
        if self.ase_by_source is not None:
            for v in self.ase_by_source.values():
                v *= g

    @property
    def total_mw(self) -> float:
        return float(np.sum(self.signal_mw) + np.sum(self.ase_mw) + np.sum(self.nli_mw))

    @property
    def total_dbm(self) -> float:
        total = self.total_mw
        return 10.0 * np.log10(total) if total > 0 else -np.inf


@dataclass
class ElementTrace:
    """State and realized operating point at the output of one element."""

    element_id: str
    kind: str  # "fiber" | "edfa"
    state: StreamState
    gain_db: float | None = None
    nf_db: float | None = None
    saturated: bool = False
    pin_dbm: float | None = None
    pout_dbm: float | None = None


def _edfa_step(
    edfa: EdfaModel,
    state: StreamState,
    setting: EdfaSetting,
    grid: FrequencyGrid,
    shared_ripple_db: np.ndarray,
) -> ElementTrace:
    pin_dbm = state.total_dbm

    mode = edfa.mode
    if setting.power_dbm is not None:
        mode = "constant_power"
    elif setting.gain_db is not None:
        mode = "constant_gain_agc"

    if mode == "constant_power":
        target = setting.power_dbm if setting.power_dbm is not None else edfa.setpoint_power_dbm
        gain = target - pin_dbm
    else:
        gain = setting.gain_db if setting.gain_db is not None else edfa.target_gain_db

    saturated = False
    if pin_dbm + gain > edfa.max_output_power_dbm:
        gain = edfa.max_output_power_dbm - pin_dbm
        saturated = True

    nf = edfa.nf_db(gain)
    profile = edfa.gain_profile_db(grid, gain, setting.tilt_db, shared_ripple_db)
    state.scale_db(profile)
    own_ase = db_to_linear(nf + profile + ase_floor_dbm(grid.frequencies, grid.ref_bandwidth))
    state.ase_mw += own_ase
    if state.ase_by_source is not None:
        state.ase_by_source[edfa.edfa_id] = (
            state.ase_by_source.get(edfa.edfa_id, 0.0) + own_ase
        )
    pout_dbm = state.total_dbm
    if edfa.output_pad_db:
        state.scale_db(-edfa.output_pad_db)
    return ElementTrace(
        edfa.edfa_id, "edfa", state.copy(), gain_db=float(gain), nf_db=nf,
        saturated=saturated, pin_dbm=pin_dbm, pout_dbm=pout_dbm,
    )


def _fiber_step(
    span: FiberSpan,
    state: StreamState,
    grid: FrequencyGrid,
    with_nli: bool,
) -> ElementTrace:
    pin_dbm = state.total_dbm
    f = grid.frequencies
    state.scale_db(-span.in_connector_db)
    if with_nli:
        psd = state.signal_mw * 1e-3 / grid.channel_spacing
        nli_generated_mw = nli_psd_w_hz(span, psd, grid) * grid.symbol_rate * 1e3
    else:
        nli_generated_mw = 0.0
    interior = span.interior_loss_db(f)
    state.scale_db(-interior)
    state.nli_mw += nli_generated_mw * db_to_linear(-interior)
    state.scale_db(-span.out_connector_db)
    return ElementTrace(
        span.span_id, "fiber", state.copy(), pin_dbm=pin_dbm, pout_dbm=state.total_dbm
    )


def propagate(
    elements: list,
    grid: FrequencyGrid,
    launch_signal_mw,
    settings: dict | None = None,
    shared_ripple_db: np.ndarray | None = None,
    with_nli: bool = True,
    track_ase_sources: bool = False,
) -> list[ElementTrace]:
    """Run the chain element by element; returns one trace per element.

    ``settings`` maps edfa_id to :class:`EdfaSetting`; amplifiers without an
    entry run at their model defaults. The shared ripple shape is a per-slot
    dB profile scaled per amplifier by its ``ripple_scale``.
    """
    settings = settings or {}
    if shared_ripple_db is None:
        shared_ripple_db = np.zeros(grid.n_channels)
    state = StreamState.launch(launch_signal_mw, track_ase_sources=track_ase_sources)
    traces = []
    for el in elements:
        if isinstance(el, EdfaModel):
            setting = settings.get(el.edfa_id, EdfaSetting())
            traces.append(_edfa_step(el, state, setting, grid, shared_ripple_db))
        elif isinstance(el, FiberSpan):
            traces.append(_fiber_step(el, state, grid, with_nli))
        else:
            raise TypeError(f"unknown element type {type(el)!r}")
    return traces
