"""Transceiver-aware QoT math: BER<->SNR, SNR composition, B2B fitting.

The 16QAM pre-FEC error-rate map is
    BER = (3/8) * erfc(sqrt(SNR / 10))
with SNR linear; its numerical inverse, the harmonic SNR combination and the
back-to-back fit of the transceiver SNR floor live here, together with the
relative Q-factor report (absolute values minus one shared offset).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq, minimize_scalar
from scipy.special import erfc

BER_CEILING_16QAM = 3.0 / 8.0

#: Fits whose transceiver floor lands above this are reported noise-free.
TRX_NOISE_FREE_DB = 40.0


class FitError(RuntimeError):
    """The back-to-back curve does not constrain the transceiver SNR."""


def ber_from_snr(snr_linear: float, mf: str = "16QAM") -> float:
    """Pre-FEC BER at the given linear SNR for the modulation format."""
    if mf != "16QAM":
        raise NotImplementedError(f"modulation format {mf!r} not implemented")
    snr = np.asarray(snr_linear, dtype=float)
    if np.any(snr < 0):
        raise ValueError("SNR must be >= 0")
    out = BER_CEILING_16QAM * erfc(np.sqrt(snr / 10.0))
    return float(out) if np.isscalar(snr_linear) else out


def snr_from_ber(ber: float, mf: str = "16QAM") -> float:
    """Numerical inverse of :func:`ber_from_snr` (monotone bisection + polish)."""
    if mf != "16QAM":
        raise NotImplementedError(f"modulation format {mf!r} not implemented")
    if not (0.0 < ber < BER_CEILING_16QAM):
        raise ValueError(f"BER must lie in (0, {BER_CEILING_16QAM})")
    hi = 10.0
    while ber_from_snr(hi) > ber:
        hi *= 4.0
        if hi > 1e12:
            break
    snr = brentq(lambda s: ber_from_snr(s) - ber, 0.0, hi, xtol=1e-300, rtol=8.9e-16)
    # One Newton step tightens to the relative-error target.
    x = math.sqrt(snr / 10.0)
    deriv = -BER_CEILING_16QAM * (2.0 / math.sqrt(math.pi)) * math.exp(-x * x) / (2.0 * math.sqrt(10.0 * snr)) if snr > 0 else None
    if deriv:
        snr -= (ber_from_snr(snr) - ber) / deriv
    return float(snr)


def combine_snr(components_db) -> float:
    """Harmonic (inverse-linear) combination of SNR terms given in dB."""
    inv = 0.0
    for c in components_db:
        if np.isfinite(c):
            inv += 10.0 ** (-c / 10.0)
    if inv == 0.0:
        return float("inf")
    return float(-10.0 * np.log10(inv))


@dataclass
class TransceiverModel:
    """Transponder pair: format, symbol rate, SNR floor, reference B2B curve."""

    mf: str = "16QAM"
    symbol_rate: float = 64e9
    snr_trx_db: float = 15.5
    b2b_curve: list = field(default_factory=list)  # [(OSNR dB, BER)]

    def __post_init__(self):
        if not np.isfinite(self.snr_trx_db):
            raise ValueError("snr_trx_db must be finite")
        for _, b in self.b2b_curve:
            if not (0.0 < b < 0.5):
                raise ValueError("B2B BER values must lie in (0, 0.5)")

    def ete_snr_db(self, gsnr_db: float) -> float:
        """Predicted end-to-end SNR: transceiver floor plus line GSNR."""
        return combine_snr([self.snr_trx_db, gsnr_db])

    def ber_at_gsnr(self, gsnr_db: float) -> float:
        return ber_from_snr(10.0 ** (self.ete_snr_db(gsnr_db) / 10.0), self.mf)


def synthesize_b2b_curve(
    snr_trx_db: float,
    osnr_db_points,
    ref_bandwidth: float = 12.5e9,
    symbol_rate: float = 64e9,
    osnr_jitter_db: float = 0.0,
    seed: int = 0,
) -> list:
    """Reference B2B curve for a transceiver with the given SNR floor."""
    rng = np.random.default_rng(seed)
    conv = 10.0 * np.log10(ref_bandwidth / symbol_rate)
    curve = []
    for osnr in osnr_db_points:
        osnr_eff = osnr + (rng.normal(0.0, osnr_jitter_db) if osnr_jitter_db > 0 else 0.0)
        snr = combine_snr([snr_trx_db, osnr_eff + conv])
        curve.append((float(osnr), ber_from_snr(10.0 ** (snr / 10.0))))
    return curve


def fit_b2b(
    curve, grid=None, ref_bandwidth: float = 12.5e9, symbol_rate: float = 64e9
) -> float:
    """Least-squares transceiver SNR floor [dB] from a B2B BER-vs-OSNR curve.

    Residuals are taken in linear SNR: the inverse error-rate map of each
    measured BER against the floor-plus-OSNR combination. Returns +inf when
    the fitted floor exceeds the noise-free threshold.
    """
    if grid is not None:
        ref_bandwidth, symbol_rate = grid.ref_bandwidth, grid.symbol_rate
    if len(curve) < 4:
        raise FitError("need at least 4 B2B points")
    bers = np.array([b for _, b in curve], dtype=float)
    if np.ptp(bers) < 1e-15:
        raise FitError("degenerate (flat) B2B curve")
    conv = 10.0 * np.log10(ref_bandwidth / symbol_rate)
    targets = np.array([snr_from_ber(b) for b in bers])
    osnr_lin = 10.0 ** ((np.array([o for o, _ in curve]) + conv) / 10.0)

    def cost(trx_db):
        inv = 10.0 ** (-trx_db / 10.0) + 1.0 / osnr_lin
        return float(np.sum((1.0 / inv - targets) ** 2))

    res = minimize_scalar(cost, bounds=(0.0, 60.0), method="bounded",
                          options={"xatol": 1e-6})
    fitted = float(res.x)
    if fitted >= TRX_NOISE_FREE_DB:
        return float("inf")
    return fitted


@dataclass
class QReport:
    """Per-channel relative Q-factors: absolute SNRs minus a shared offset."""

    channels: list
    predicted_snr_db: list
    measured_snr_db: list | None
    offset_db: float

    def __post_init__(self):
        n = len(self.channels)
        if len(self.predicted_snr_db) != n:
            raise ValueError("predicted values must match channels")
        if self.measured_snr_db is not None and len(self.measured_snr_db) != n:
            raise ValueError("measured values must match channels")

    @property
    def predicted_relative_q_db(self) -> list:
        return [p - self.offset_db for p in self.predicted_snr_db]

    @property
    def measured_relative_q_db(self) -> list | None:
        if self.measured_snr_db is None:
            return None
        return [m - self.offset_db for m in self.measured_snr_db]

    def error_db(self) -> list | None:
        """Predicted minus measured; invariant under the offset."""
        if self.measured_snr_db is None:
            return None
        return [p - m for p, m in zip(self.predicted_snr_db, self.measured_snr_db)]

    def to_dict(self):
        return {
            "channels": list(self.channels),
            "offset_db": self.offset_db,
            "predicted_relative_q_db": self.predicted_relative_q_db,
            "measured_relative_q_db": self.measured_relative_q_db,
            "error_db": self.error_db(),
        }

    def to_csv(self, sep: str = ",") -> str:
        cols = ["channel", "predicted_relative_q_db"]
        measured = self.measured_relative_q_db
        errors = self.error_db()
        if measured is not None:
            cols += ["measured_relative_q_db", "error_db"]
        lines = [sep.join(cols)]
        for i, ch in enumerate(self.channels):
            row = [str(ch), f"{self.predicted_relative_q_db[i]:.6f}"]
            if measured is not None:
                row += [f"{measured[i]:.6f}", f"{errors[i]:.6f}"]
            lines.append(sep.join(row))
        return "\n".join(lines) + "\n"


def relative_q(
    predicted_snr_db, measured_snr_db=None, offset_db: float = 0.0, channels=None
) -> QReport:
    """Build a relative-Q report with one shared offset."""
    predicted = [float(p) for p in predicted_snr_db]
    channels = list(channels) if channels is not None else list(range(len(predicted)))
    measured = None if measured_snr_db is None else [float(m) for m in measured_snr_db]
    return QReport(channels, predicted, measured, float(offset_db))
