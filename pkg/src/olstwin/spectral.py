"""Frequency grid, dB/linear conversions and per-channel spectral profiles.

Every other module trades in :class:`SpectralProfile` objects: a vector of
values (power, OSNR, gain, ripple) pinned to a :class:`FrequencyGrid`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DB_UNITS = ("dBm", "dB")
LINEAR_UNITS = ("linear_mW", "linear_ratio")
_LINEAR_FOR = {"dBm": "linear_mW", "dB": "linear_ratio"}
_DB_FOR = {v: k for k, v in _LINEAR_FOR.items()}


class GridMismatchError(ValueError):
    """Two profiles do not share the same grid or unit."""


def db_to_linear(x):
    """dB (or dBm) to linear ratio (or mW)."""
    return 10.0 ** (np.asarray(x, dtype=float) / 10.0)


def linear_to_db(x):
    """Linear ratio (or mW) to dB (or dBm). Input must be strictly positive."""
    arr = np.asarray(x, dtype=float)
    if np.any(arr <= 0.0):
        raise ValueError("linear value must be > 0 for dB conversion")
    return 10.0 * np.log10(arr)


def db_linear_convert(x: float, direction: str) -> float:
    """Scalar conversion; ``direction`` is ``"db_to_linear"`` or ``"linear_to_db"``."""
    if direction == "db_to_linear":
        return float(db_to_linear(x))
    if direction == "linear_to_db":
        return float(linear_to_db(x))
    raise ValueError(f"unknown direction {direction!r}")


@dataclass(frozen=True)
class FrequencyGrid:
    """Fixed WDM grid: uniformly spaced channel centers.

    ``dlm_slots`` flags the pair of adjacent slots reserved for the wide
    monitoring channel; ``trx_slots`` flags the data transceiver channels.
    OSNR values everywhere are referenced to ``ref_bandwidth``.
    """

    f_center_first: float
    channel_spacing: float
    n_channels: int
    ref_bandwidth: float = 12.5e9
    symbol_rate: float = 64e9
    dlm_slots: tuple = (0, 1)
    trx_slots: tuple = (5, 15, 25, 35)

    def __post_init__(self):
        if self.n_channels < 1:
            raise ValueError("n_channels must be >= 1")
        if self.channel_spacing <= 0:
            raise ValueError("channel_spacing must be > 0")
        if self.ref_bandwidth <= 0:
            raise ValueError("ref_bandwidth must be > 0")
        for s in tuple(self.dlm_slots) + tuple(self.trx_slots):
            if not (0 <= s < self.n_channels):
                raise ValueError(f"slot index {s} outside grid")

    @property
    def frequencies(self) -> np.ndarray:
        return self.f_center_first + self.channel_spacing * np.arange(self.n_channels)

    @property
    def f_min(self) -> float:
        return self.f_center_first

    @property
    def f_max(self) -> float:
        return self.f_center_first + self.channel_spacing * (self.n_channels - 1)

    @property
    def f_mid(self) -> float:
        return 0.5 * (self.f_min + self.f_max)

    @property
    def dlm_frequency(self) -> float:
        """Center frequency of the (double-width) monitoring channel."""
        return float(np.mean(self.frequencies[list(self.dlm_slots)]))


def default_grid() -> FrequencyGrid:
    """40 slots at 100 GHz starting 191.65 THz across the C-band."""
    return FrequencyGrid(f_center_first=191.65e12, channel_spacing=100e9, n_channels=40)


@dataclass(frozen=True)
class SpectralProfile:
    """A per-channel vector of values in one unit, pinned to a grid."""

    grid: FrequencyGrid
    values: np.ndarray
    unit: str = "dB"

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        if vals.ndim != 1 or len(vals) != self.grid.n_channels:
            raise GridMismatchError(
                f"profile length {vals.size} != n_channels {self.grid.n_channels}"
            )
        if self.unit not in DB_UNITS + LINEAR_UNITS:
            raise ValueError(f"unknown unit {self.unit!r}")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    def to_db(self) -> "SpectralProfile":
        if self.unit in DB_UNITS:
            return self
        return SpectralProfile(self.grid, linear_to_db(self.values), _DB_FOR[self.unit])

    def to_linear(self) -> "SpectralProfile":
        if self.unit in LINEAR_UNITS:
            return self
        return SpectralProfile(self.grid, db_to_linear(self.values), _LINEAR_FOR[self.unit])

    def with_values(self, values) -> "SpectralProfile":
        return SpectralProfile(self.grid, values, self.unit)


def profile_stats(p: SpectralProfile):
    """Mean over channels, zero-mean ripple profile, and population std.

    Statistics are taken in the profile's stored unit: dB-domain statistics
    for dB profiles, linear statistics for linear ones.
    """
    if p.grid.n_channels < 1 or p.values.size == 0:
        raise ValueError("profile must be non-empty")
    vals = p.values[np.isfinite(p.values)]
    if vals.size == 0:
        raise ValueError("profile has no finite values")
    mean = float(np.mean(vals))
    ripple = p.with_values(p.values - mean)
    std = float(np.std(vals))
    return mean, ripple, std


def profile_error(measured: SpectralProfile, simulated: SpectralProfile) -> SpectralProfile:
    """Channelwise measured - simulated on matching grids and units."""
    if measured.grid != simulated.grid:
        raise GridMismatchError("profiles live on different grids")
    if measured.unit != simulated.unit:
        raise GridMismatchError(
            f"unit mismatch: {measured.unit!r} vs {simulated.unit!r}"
        )
    return measured.with_values(measured.values - simulated.values)
