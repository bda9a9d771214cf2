"""Desk-scale digital twin of a multi-span amplified optical line.

Simulates a ground-truth fiber/amplifier plant and its telemetry, recovers
the plant's physical parameters from longitudinal-profile extraction plus an
optimization-based calibration, predicts per-channel quality of transmission
and drives a timed, human-gated provisioning workflow with rollback.
"""

from .spectral import (
    FrequencyGrid,
    SpectralProfile,
    db_linear_convert,
    default_grid,
    profile_error,
    profile_stats,
)
from .elements import EdfaModel, FiberSpan
from .gn import ParameterSet, QotPrediction, predict
from .plant import CombSource, NoiseSpec, OpticalLinePlant, TelemetryRecord
from .plantio import example_plant, example_plant_path, load_plant, loads_plant
from .qot import TransceiverModel, ber_from_snr, combine_snr, snr_from_ber

__all__ = [
    "FrequencyGrid",
    "SpectralProfile",
    "db_linear_convert",
    "default_grid",
    "profile_error",
    "profile_stats",
    "EdfaModel",
    "FiberSpan",
    "ParameterSet",
    "QotPrediction",
    "predict",
    "CombSource",
    "NoiseSpec",
    "OpticalLinePlant",
    "TelemetryRecord",
    "example_plant",
    "example_plant_path",
    "load_plant",
    "loads_plant",
    "TransceiverModel",
    "ber_from_snr",
    "combine_snr",
    "snr_from_ber",
]

__version__ = "0.1.0"
