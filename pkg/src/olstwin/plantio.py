"""Plant description files: a human-editable YAML dialect (.plant).

A document describes the grid, the shared amplifier ripple shape, and the
ordered element chain with per-span attenuation given as a band-mean plus a
zero-mean 5-knot spectral shape.
"""

from __future__ import annotations

import importlib.resources

import numpy as np
import yaml

from .elements import EdfaModel, FiberSpan
from .plant import OpticalLinePlant, make_shared_ripple
from .spectral import FrequencyGrid


class PlantFormatError(ValueError):
    """The plant document is malformed or self-inconsistent."""


def _build_grid(doc: dict) -> FrequencyGrid:
    g = doc.get("grid") or {}
    try:
        return FrequencyGrid(
            f_center_first=float(g["first_center_hz"]),
            channel_spacing=float(g["channel_spacing_hz"]),
            n_channels=int(g["n_channels"]),
            ref_bandwidth=float(g.get("ref_bandwidth_hz", 12.5e9)),
            symbol_rate=float(g.get("symbol_rate_hz", 64e9)),
            dlm_slots=tuple(g.get("dlm_slots", (0, 1))),
            trx_slots=tuple(g.get("trx_slots", (5, 15, 25, 35))),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise PlantFormatError(f"bad grid section: {exc}") from exc


def _alpha_knots(grid: FrequencyGrid, mean_db_km: float, shape: list) -> list:
    """Compose knots so the per-slot band average equals the declared mean."""
    shape = np.asarray(shape if shape is not None else [0.0] * 5, dtype=float)
    f_knots = np.linspace(grid.f_min, grid.f_max, len(shape))
    interp = np.interp(grid.frequencies, f_knots, shape)
    shape = shape - float(np.mean(interp))
    return [(float(f), float(mean_db_km + s)) for f, s in zip(f_knots, shape)]


def _build_fiber(grid: FrequencyGrid, spec: dict) -> FiberSpan:
    knots = _alpha_knots(
        grid, float(spec["alpha_mean_db_km"]), spec.get("alpha_shape_db_km")
    )
    span = FiberSpan(
        span_id=str(spec["span_id"]),
        length_km=float(spec["length_km"]),
        alpha_knots=knots,
        dispersion_ps_nm_km=float(spec["dispersion_ps_nm_km"]),
        gamma_w_km=float(spec.get("gamma_w_km", 0.0)),
        a_eff_um2=float(spec.get("a_eff_um2", 0.0)),
        in_connector_db=float(spec.get("in_connector_db", 0.0)),
        out_connector_db=float(spec.get("out_connector_db", 0.0)),
        lumped_losses=[(float(p), float(d)) for p, d in spec.get("lumped_losses", [])],
        connector_standoff_km=float(spec.get("connector_standoff_km", 6.0)),
    )
    declared = spec.get("total_loss_db")
    if declared is not None:
        got = float(np.mean(span.total_loss_db(grid.frequencies)))
        if abs(got - float(declared)) > 0.01:
            raise PlantFormatError(
                f"span {span.span_id}: declared total loss {declared} dB but "
                f"parameters give {got:.3f} dB"
            )
    return span


def _build_edfa(spec: dict) -> EdfaModel:
    return EdfaModel(
        edfa_id=str(spec["edfa_id"]),
        mode=str(spec.get("mode", "constant_gain_agc")),
        target_gain_db=float(spec.get("target_gain_db", 0.0)),
        tilt_db=float(spec.get("tilt_db", 0.0)),
        setpoint_power_dbm=float(spec.get("setpoint_power_dbm", 0.0)),
        nf_curve=[(float(g), float(n)) for g, n in spec["nf_curve"]],
        ripple_scale=float(spec.get("ripple_scale", 1.0)),
        max_output_power_dbm=float(spec.get("max_output_power_dbm", 23.0)),
        output_pad_db=float(spec.get("output_pad_db", 0.0)),
    )


def plant_from_dict(doc: dict) -> OpticalLinePlant:
    if not isinstance(doc, dict):
        raise PlantFormatError("plant document must be a mapping")
    grid = _build_grid(doc)
    rip = doc.get("shared_ripple") or {}
    ripple = make_shared_ripple(
        grid,
        peak_to_peak_db=float(rip.get("peak_to_peak_db", 1.0)),
        seed=int(rip.get("seed", 7)),
        components=int(rip.get("components", 3)),
    )
    elements, tags = [], []
    for item in doc.get("elements") or []:
        try:
            kind = item["type"]
            if kind == "fiber":
                elements.append(_build_fiber(grid, item))
            elif kind == "edfa":
                elements.append(_build_edfa(item))
            else:
                raise PlantFormatError(f"unknown element type {kind!r}")
            tags.append(str(item.get("segment", "carrier")))
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, PlantFormatError):
                raise
            raise PlantFormatError(f"bad element {item}: {exc}") from exc
    if not elements:
        raise PlantFormatError("plant has no elements")
    try:
        return OpticalLinePlant(
            name=str(doc.get("name", "unnamed")),
            grid=grid,
            elements=elements,
            segment_tags=tags,
            shared_ripple_db=ripple,
            dlm_setpoint_dbm=float(doc.get("dlm_setpoint_dbm", 12.0)),
        )
    except ValueError as exc:
        raise PlantFormatError(str(exc)) from exc


def loads_plant(text: str) -> OpticalLinePlant:
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise PlantFormatError(f"not valid YAML: {exc}") from exc
    return plant_from_dict(doc)


def load_plant(path) -> OpticalLinePlant:
    with open(path, "r", encoding="utf-8") as fh:
        return loads_plant(fh.read())


def example_plant_path() -> str:
    """Path of the packaged five-span example line."""
    ref = importlib.resources.files("olstwin").joinpath("data/duke_field_trial.plant")
    return str(ref)


def example_plant() -> OpticalLinePlant:
    return load_plant(example_plant_path())
