"""Physical line elements: fiber spans and amplifiers.

Holds the parameter records shared by the ground-truth line and by every
estimated parameter set, plus the per-element physics (loss profiles, gain
profiles, ASE, per-span nonlinear interference).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .spectral import FrequencyGrid

PLANCK_H = 6.62607015e-34  # J*s
C_LIGHT = 299792458.0  # m/s
N2_SILICA = 2.6e-20  # m^2/W
LAMBDA_REF = 1550e-9  # m

#: Assumed flat noise figure for the access-link amplifiers.
AAL_NF_DB = 6.5


def gamma_from_aeff(a_eff_um2: float) -> float:
    """Nonlinear coefficient [1/(W*km)] from effective area [um^2]."""
    if a_eff_um2 <= 0:
        raise ValueError("effective area must be > 0")
    gamma_w_m = 2.0 * math.pi * N2_SILICA / (LAMBDA_REF * a_eff_um2 * 1e-12)
    return gamma_w_m * 1e3


def aeff_from_gamma(gamma_w_km: float) -> float:
    """Effective area [um^2] from nonlinear coefficient [1/(W*km)]."""
    if gamma_w_km <= 0:
        raise ValueError("nonlinear coefficient must be > 0")
    gamma_w_m = gamma_w_km / 1e3
    return 2.0 * math.pi * N2_SILICA / (LAMBDA_REF * gamma_w_m) / 1e-12


def ase_floor_dbm(f_hz, ref_bandwidth_hz: float):
    """10*log10(h*f*B_ref / 1 mW): the quantum-noise term of the ASE formula."""
    return 10.0 * np.log10(PLANCK_H * np.asarray(f_hz, dtype=float) * ref_bandwidth_hz * 1e3)


@dataclass
class FiberSpan:
    """One fiber span with frequency-dependent attenuation and lumped losses.

    ``alpha_knots`` is a piecewise-linear attenuation curve [(Hz, dB/km)].
    Connector losses sit at the span edges; for longitudinal-profile
    synthesis they are placed ``connector_standoff_km`` inside the span
    (patch panel + premises run), which keeps them resolvable from the
    amplifier step at the same cumulative distance.
    """

    span_id: str
    length_km: float
    alpha_knots: list
    dispersion_ps_nm_km: float
    gamma_w_km: float
    a_eff_um2: float
    in_connector_db: float = 0.0
    out_connector_db: float = 0.0
    lumped_losses: list = field(default_factory=list)
    connector_standoff_km: float = 6.0

    def __post_init__(self):
        if self.length_km < 0:
            raise ValueError("span length must be >= 0")
        if self.in_connector_db < 0 or self.out_connector_db < 0:
            raise ValueError("connector losses must be >= 0")
        for pos, db in self.lumped_losses:
            if db < 0:
                raise ValueError("lumped losses must be >= 0")
            if not (0.0 < pos < self.length_km):
                raise ValueError(
                    f"lumped loss position {pos} outside (0, {self.length_km})"
                )
        if not self.alpha_knots:
            raise ValueError("alpha_knots must not be empty")
        if self.gamma_w_km > 0 and self.a_eff_um2 > 0:
            implied = gamma_from_aeff(self.a_eff_um2)
            if abs(implied - self.gamma_w_km) / implied > 0.01:
                raise ValueError(
                    f"span {self.span_id}: gamma {self.gamma_w_km} and a_eff "
                    f"{self.a_eff_um2} inconsistent (implied gamma {implied:.4f})"
                )

    def alpha_db_km(self, f_hz) -> np.ndarray:
        """Attenuation [dB/km] at the given frequencies (clamped interpolation)."""
        knots_f = np.array([k[0] for k in self.alpha_knots], dtype=float)
        knots_a = np.array([k[1] for k in self.alpha_knots], dtype=float)
        return np.interp(np.asarray(f_hz, dtype=float), knots_f, knots_a)

    def interior_loss_db(self, f_hz) -> np.ndarray:
        """Distributed plus mid-span lumped loss, excluding connectors."""
        lumped = sum(db for _, db in self.lumped_losses)
        return self.alpha_db_km(f_hz) * self.length_km + lumped

    def total_loss_db(self, f_hz) -> np.ndarray:
        return self.interior_loss_db(f_hz) + self.in_connector_db + self.out_connector_db

    def mean_alpha_db_km(self, grid: FrequencyGrid) -> float:
        return float(np.mean(self.alpha_db_km(grid.frequencies)))

    def to_dict(self):
        return {
            "type": "fiber",
            "span_id": self.span_id,
            "length_km": self.length_km,
            "alpha_knots": [[f, a] for f, a in self.alpha_knots],
            "dispersion_ps_nm_km": self.dispersion_ps_nm_km,
            "gamma_w_km": self.gamma_w_km,
            "a_eff_um2": self.a_eff_um2,
            "in_connector_db": self.in_connector_db,
            "out_connector_db": self.out_connector_db,
            "lumped_losses": [[p, d] for p, d in self.lumped_losses],
            "connector_standoff_km": self.connector_standoff_km,
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d.pop("type", None)
        d["alpha_knots"] = [(f, a) for f, a in d["alpha_knots"]]
        d["lumped_losses"] = [(p, v) for p, v in d.get("lumped_losses", [])]
        return cls(**d)


@dataclass
class EdfaModel:
    """Single-stage AGC/constant-power amplifier with gain-dependent NF.

    ``nf_curve`` is [(gain dB, NF dB)] with strictly increasing gains;
    queries outside the curve clamp to the endpoints. ``ripple_scale``
    multiplies the line-shared intrinsic ripple shape. ``output_pad_db``
    models fixed insertion (edge WSS / patching) after the output
    photodiode: telemetry and the power setpoint refer to the module port,
    the pad applies downstream of it.
    """

    edfa_id: str
    mode: str = "constant_gain_agc"
    target_gain_db: float = 0.0
    tilt_db: float = 0.0
    setpoint_power_dbm: float = 0.0
    nf_curve: list = field(default_factory=lambda: [(5.0, 6.0), (25.0, 6.0)])
    ripple_scale: float = 1.0
    max_output_power_dbm: float = 23.0
    output_pad_db: float = 0.0

    def __post_init__(self):
        if self.mode not in ("constant_gain_agc", "constant_power"):
            raise ValueError(f"unknown EDFA mode {self.mode!r}")
        if len(self.nf_curve) < 2:
            raise ValueError("nf_curve needs at least 2 points")
        gains = [g for g, _ in self.nf_curve]
        if any(b <= a for a, b in zip(gains, gains[1:])):
            raise ValueError("nf_curve gains must be strictly increasing")
        if self.ripple_scale < 0:
            raise ValueError("ripple_scale must be >= 0")

    def nf_db(self, gain_db: float) -> float:
        """NF at the operating gain; clamped outside the curve."""
        gains = np.array([g for g, _ in self.nf_curve], dtype=float)
        nfs = np.array([n for _, n in self.nf_curve], dtype=float)
        return float(np.interp(gain_db, gains, nfs))

    def to_dict(self):
        return {
            "type": "edfa",
            "edfa_id": self.edfa_id,
            "mode": self.mode,
            "target_gain_db": self.target_gain_db,
            "tilt_db": self.tilt_db,
            "setpoint_power_dbm": self.setpoint_power_dbm,
            "nf_curve": [[g, n] for g, n in self.nf_curve],
            "ripple_scale": self.ripple_scale,
            "max_output_power_dbm": self.max_output_power_dbm,
            "output_pad_db": self.output_pad_db,
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d.pop("type", None)
        d["nf_curve"] = [(g, n) for g, n in d["nf_curve"]]
        return cls(**d)

    def gain_profile_db(
        self,
        grid: FrequencyGrid,
        gain_db: float,
        tilt_db: float,
        shared_ripple_db: np.ndarray,
    ) -> np.ndarray:
        """Per-channel gain: flat target + linear tilt + scaled shared ripple.

        Tilt is the end-to-end gain difference across the band: +tilt/2 at the
        top edge, -tilt/2 at the bottom edge.
        """
        f = grid.frequencies
        rel = (f - grid.f_mid) / (grid.f_max - grid.f_min) if grid.n_channels > 1 else 0.0
        return gain_db + tilt_db * rel + self.ripple_scale * np.asarray(shared_ripple_db)


CATALAN = 0.915965594177219015


def _arcsinh_mass(y: np.ndarray) -> np.ndarray:
    """Integral of atan(t)/t from 0 to y in an arcsinh closed form.

    Exact in both limits: ~(pi/4 + Catalan)*y for small y and
    (pi/2)*ln(2y) + Catalan for large y.
    """
    return (math.pi / 2.0) * np.arcsinh(y / 2.0) + CATALAN * (1.0 - 1.0 / (1.0 + y))


def nli_psd_w_hz(
    span: FiberSpan,
    psd_w_hz: np.ndarray,
    grid: FrequencyGrid,
) -> np.ndarray:
    """Per-channel NLI spectral density generated by one span [W/Hz].

    Incoherent arcsinh-form closed expression
        G_NLI = (16/27) * gamma^2 * G^3 * (1 - exp(-2*a_pow*L))
                * 4 * M(c * B_wdm^2 / (4 * a_pow)) / (a_pow * c)
    with G the local channel PSD (quasi-flat comb), a_pow the power
    attenuation [1/m] (twice the field coefficient), c = 4*pi^2*|b2| and M
    the arcsinh mass above. For strongly attenuated spans this reduces to
    the familiar effective-length-squared arcsinh formula; the
    (1 - exp(-2*a_pow*L)) envelope keeps short low-loss spans within the
    reference double integral (validated against it to a few tenths of a
    dB). Referred to the span input, so it propagates to the receiver under
    the same losses/gains as the signal.
    """
    psd = np.asarray(psd_w_hz, dtype=float)
    f = grid.frequencies
    gamma_w_m = span.gamma_w_km / 1e3
    if gamma_w_m == 0.0 or span.length_km == 0.0:
        return np.zeros_like(psd)

    # Power attenuation [1/m]: P(z) = P0 * exp(-a_pow * z).
    alpha_db_km = span.alpha_db_km(f)
    a_pow = np.maximum(alpha_db_km, 1e-9) * math.log(10.0) / 10.0 / 1e3
    length_m = span.length_km * 1e3

    lam = C_LIGHT / f
    beta2 = np.abs(-span.dispersion_ps_nm_km * 1e-6 * lam**2 / (2.0 * math.pi * C_LIGHT))
    b_wdm = grid.n_channels * grid.channel_spacing
    c = 4.0 * math.pi**2 * beta2

    y = c * b_wdm**2 / (4.0 * a_pow)
    # Series form below 1e-6 covers the zero-dispersion limit without 0/0.
    small = y < 1e-6
    kernel = np.empty_like(y)
    kernel[small] = (math.pi / 4.0 + CATALAN) * b_wdm**2 / a_pow[small] ** 2
    if np.any(~small):
        kernel[~small] = (
            _arcsinh_mass(y[~small]) / (a_pow[~small] * c[~small])
        )
    envelope = 1.0 - np.exp(-2.0 * a_pow * length_m)
    return (16.0 / 27.0) * gamma_w_m**2 * psd**3 * 4.0 * kernel * envelope
