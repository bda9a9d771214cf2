"""HTTP service: plants, runs, telemetry, predictions and the decision gate.

The service owns run execution (background worker threads) and persistence;
it is the only mutation path for runs. Reads are side-effect free; the
decision endpoint is idempotent per run.
"""

from __future__ import annotations

import os
import threading
import uuid
from dataclasses import dataclass, field

from fastapi import FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware
from pydantic import BaseModel

from .plant import NoiseSpec
from .plantio import PlantFormatError, loads_plant
from .provisioning import (
    ProvisioningRun,
    RunConfig,
    run_provisioning,
    stability_run,
)
from .propagation import EdfaSetting

DEFAULT_ADDR = "127.0.0.1:8080"


class QueueDecisionSource:
    """Decision gate fed by the HTTP endpoint.

    The provisioning worker blocks on a wall-clock event while the virtual
    clock charges the inspection minute (or the full timeout on expiry).
    """

    def __init__(self, wall_seconds_per_min: float = 1.0, inspection_min: float = 1.0):
        self.wall_seconds_per_min = wall_seconds_per_min
        self.inspection_min = inspection_min
        self._event = threading.Event()
        self._decision: str | None = None
        self._lock = threading.Lock()

    def submit(self, decision: str) -> bool:
        with self._lock:
            if self._event.is_set():
                return self._decision == decision
            self._decision = decision
            self._event.set()
            return True

    @property
    def submitted(self) -> str | None:
        return self._decision

    def decide(self, run, timeout_min: float):
        if self._event.wait(timeout=timeout_min * self.wall_seconds_per_min):
            return self._decision, self.inspection_min
        return None


@dataclass
class RunHandle:
    run: ProvisioningRun
    decision_source: QueueDecisionSource
    thread: threading.Thread
    plant_id: str
    config: RunConfig
    plant: object
    stability: dict | None = None
    lock: threading.Lock = field(default_factory=threading.Lock)


class PlantBody(BaseModel):
    content: str
    name: str | None = None


class RunBody(BaseModel):
    plant_id: str
    config: dict | None = None


class DecisionBody(BaseModel):
    decision: str


def _run_config_from(payload: dict | None, data_dir: str | None) -> RunConfig:
    payload = payload or {}
    cfg = RunConfig(data_dir=data_dir)
    if "seed" in payload:
        cfg.noise = NoiseSpec(seed=int(payload["seed"]))
    if "sigma_zero" in payload and payload["sigma_zero"]:
        cfg.noise = NoiseSpec.zero(seed=cfg.noise.seed)
    for key in (
        "decision_timeout_min",
        "sweep_from_db",
        "sweep_to_db",
        "sweep_step_db",
        "q_offset_db",
    ):
        if key in payload:
            setattr(cfg, key, float(payload[key]))
    if "n_records" in payload:
        cfg.n_records = int(payload["n_records"])
    if "max_cost_evals" in payload:
        cfg.max_cost_evals = int(payload["max_cost_evals"])
    return cfg


def create_app(
    data_dir: str | None = None,
    wall_seconds_per_min: float = 1.0,
    pipeline=None,
) -> FastAPI:
    app = FastAPI(title="olstwin service")
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )
    data_dir = data_dir or os.environ.get("OLS_TWIN_DATA")
    plants: dict = {}
    handles: dict[str, RunHandle] = {}
    app.state.plants = plants
    app.state.runs = handles

    def get_handle(run_id: str) -> RunHandle:
        if run_id not in handles:
            raise HTTPException(status_code=404, detail=f"unknown run {run_id}")
        return handles[run_id]

    @app.post("/plants")
    def post_plant(body: PlantBody):
        try:
            plant = loads_plant(body.content)
        except PlantFormatError as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        plant_id = uuid.uuid4().hex[:8]
        plants[plant_id] = plant
        return {"plant_id": plant_id, "name": plant.name}

    @app.get("/plants")
    def list_plants():
        return {
            "plants": [
                {"plant_id": pid, "name": pl.name} for pid, pl in plants.items()
            ]
        }

    def start_run(plant_id: str, config_payload: dict | None = None) -> str:
        if plant_id not in plants:
            raise HTTPException(status_code=404, detail=f"unknown plant {plant_id}")
        plant = plants[plant_id]
        cfg = _run_config_from(config_payload, data_dir)
        run_id = uuid.uuid4().hex[:12]
        run = ProvisioningRun(run_id=run_id)
        source = QueueDecisionSource(wall_seconds_per_min=wall_seconds_per_min)
        thread = threading.Thread(
            target=run_provisioning,
            kwargs={
                "plant": plant,
                "config": cfg,
                "decision_source": source,
                "run": run,
                "pipeline": pipeline,
            },
            daemon=True,
        )
        handles[run_id] = RunHandle(
            run=run, decision_source=source, thread=thread,
            plant_id=plant_id, config=cfg, plant=plant,
        )
        thread.start()
        return run_id

    app.state.start_run = start_run

    @app.post("/runs")
    def post_run(body: RunBody):
        return {"run_id": start_run(body.plant_id, body.config)}

    @app.get("/runs")
    def list_runs():
        return {"runs": [h.run.summary() for h in handles.values()]}

    @app.get("/runs/{run_id}")
    def get_run(run_id: str):
        handle = get_handle(run_id)
        summary = handle.run.summary()
        summary["decision_timeout_min"] = handle.config.decision_timeout_min
        summary["wall_seconds_per_min"] = wall_seconds_per_min
        return summary

    @app.get("/runs/{run_id}/timeline")
    def get_timeline(run_id: str):
        return {"timeline": get_handle(run_id).run.timeline_dict()}

    @app.get("/runs/{run_id}/profile")
    def get_profile(run_id: str):
        run = get_handle(run_id).run
        profile = run.store.local.get("dlm_raw_profile")
        extract = run.store.remote.get("dataset1")
        if profile is None:
            raise HTTPException(status_code=409, detail="profile not measured yet")
        return {"profile": profile, "extract": extract}

    @app.get("/runs/{run_id}/parameters")
    def get_parameters(run_id: str):
        run = get_handle(run_id).run
        params = run.store.remote.get("params")
        if params is None:
            raise HTTPException(status_code=409, detail="parameters not computed yet")
        return {
            "params": params,
            "calibration": run.store.remote.get("dataset2"),
            "baseline": run.store.remote.get("baseline_params"),
        }

    @app.get("/runs/{run_id}/qot")
    def get_qot(run_id: str):
        run = get_handle(run_id).run
        report = run.store.remote.get("sweep_report")
        if report is None:
            raise HTTPException(status_code=409, detail="validation sweep not computed yet")
        return report

    @app.post("/runs/{run_id}/decision")
    def post_decision(run_id: str, body: DecisionBody):
        handle = get_handle(run_id)
        if body.decision not in ("adopt", "revert"):
            raise HTTPException(status_code=400, detail="decision must be adopt or revert")
        run = handle.run
        if run.state == "AwaitDecision":
            if handle.decision_source.submit(body.decision):
                return {"status": "accepted", "decision": body.decision}
            raise HTTPException(
                status_code=409,
                detail=f"conflicting decision; already {handle.decision_source.submitted}",
            )
        if run.decision and run.decision.get("decision") == body.decision:
            return {"status": "no-op", "decision": body.decision}
        raise HTTPException(
            status_code=409, detail=f"run is in state {run.state}, not awaiting a decision"
        )

    @app.get("/runs/{run_id}/stability")
    def get_stability(run_id: str, duration_min: float = 300.0, interval_min: float = 1.0):
        handle = get_handle(run_id)
        run = handle.run
        committed = (
            run.state == "Done"
            and run.decision
            and run.decision.get("decision") == "adopt"
        )
        if not committed:
            raise HTTPException(
                status_code=409, detail="no committed configuration to monitor"
            )
        with handle.lock:
            if handle.stability is None:
                settings = {
                    k: EdfaSetting.from_dict(v)
                    for k, v in run.artifacts["transparency_settings"].items()
                }
                handle.stability = stability_run(
                    handle.plant,
                    handle.config.comb,
                    settings,
                    handle.config.trx,
                    handle.config.noise,
                    duration_min=duration_min,
                    interval_min=interval_min,
                    offset_db=handle.config.q_offset_db,
                )
        return handle.stability

    return app


def main(addr: str | None = None, data_dir: str | None = None):
    """Run the service with uvicorn."""
    import uvicorn

    addr = addr or os.environ.get("OLS_TWIN_ADDR", DEFAULT_ADDR)
    host, _, port = addr.partition(":")
    app = create_app(data_dir=data_dir)
    uvicorn.run(app, host=host or "127.0.0.1", port=int(port or 8080))


if __name__ == "__main__":
    main()
