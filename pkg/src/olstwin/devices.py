"""In-process device endpoints and the split local/remote artifact store.

Devices expose a unified candidate/running config interface: edits land in
the candidate datastore, ``commit`` promotes candidate to running,
``discard`` resets candidate to running. The hybrid store keeps bulky raw
measurement arrays strictly at the local site; only extracted parameters
and reports cross to the remote side, and an audit can prove it.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field

DEVICE_KINDS = ("fxc", "trx", "edfa", "wss", "osa")


class IllegalDeviceOp(RuntimeError):
    pass


@dataclass
class DeviceEndpoint:
    """One mock device with candidate/running JSON config datastores."""

    device_id: str
    kind: str
    running: dict = field(default_factory=dict)
    candidate: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in DEVICE_KINDS:
            raise ValueError(f"unknown device kind {self.kind!r}")
        if not self.candidate:
            self.candidate = copy.deepcopy(self.running)

    def get(self, datastore: str = "running") -> dict:
        if datastore == "running":
            return copy.deepcopy(self.running)
        if datastore == "candidate":
            return copy.deepcopy(self.candidate)
        raise IllegalDeviceOp(f"unknown datastore {datastore!r}")

    def edit_candidate(self, patch: dict) -> None:
        self.candidate.update(copy.deepcopy(patch))

    def commit(self) -> None:
        self.running = copy.deepcopy(self.candidate)

    def discard(self) -> None:
        self.candidate = copy.deepcopy(self.running)

    def running_bytes(self) -> bytes:
        return json.dumps(self.running, sort_keys=True).encode()


@dataclass
class DeviceInventory:
    """All endpoints of one line, addressable by id."""

    devices: dict = field(default_factory=dict)

    def add(self, device: DeviceEndpoint) -> DeviceEndpoint:
        self.devices[device.device_id] = device
        return device

    def __getitem__(self, device_id: str) -> DeviceEndpoint:
        return self.devices[device_id]

    def snapshot_running(self) -> dict:
        return {did: d.running_bytes() for did, d in self.devices.items()}

    def restore_running(self, snapshot: dict) -> None:
        for did, blob in snapshot.items():
            dev = self.devices[did]
            dev.running = json.loads(blob.decode())
            dev.discard()

    def commit_all(self) -> None:
        for d in self.devices.values():
            d.commit()

    def discard_all(self) -> None:
        for d in self.devices.values():
            d.discard()


def inventory_for_line(plant) -> DeviceInventory:
    """Endpoints for a line: per-EDFA devices plus edge FXC/WSS/OSA/TRx."""
    inv = DeviceInventory()
    for e in plant.edfas():
        inv.add(
            DeviceEndpoint(
                e.edfa_id,
                "edfa",
                running={
                    "mode": e.mode,
                    "gain_db": e.target_gain_db,
                    "tilt_db": e.tilt_db,
                    "power_dbm": e.setpoint_power_dbm,
                },
            )
        )
    inv.add(DeviceEndpoint("FXC-1", "fxc", running={"route": "old_line"}))
    inv.add(DeviceEndpoint("FXC-2", "fxc", running={"route": "old_line"}))
    inv.add(DeviceEndpoint("WSS-EDGE1", "wss", running={"profile": "idle"}))
    inv.add(DeviceEndpoint("OSA-EDGE2", "osa", running={"mode": "idle"}))
    for i, slot in enumerate(plant.grid.trx_slots):
        inv.add(
            DeviceEndpoint(f"TRX-{i + 1}", "trx", running={"slot": int(slot), "state": "up"})
        )
    return inv


class RawArrayInRemoteStore(AssertionError):
    pass


@dataclass
class HybridStore:
    """Keyed blob stores for the local and remote sites with a transfer log."""

    local: dict = field(default_factory=dict)
    remote: dict = field(default_factory=dict)
    transfer_log: list = field(default_factory=list)

    def put_local(self, key: str, obj) -> None:
        self.local[key] = obj

    def put_remote(self, key: str, obj) -> None:
        self.remote[key] = obj
        self.transfer_log.append(key)

    @staticmethod
    def _find_raw_arrays(obj, path="$"):
        """Raw sample arrays: long numeric vectors or matrices of vectors."""
        hits = []
        if isinstance(obj, dict):
            for k, v in obj.items():
                hits.extend(HybridStore._find_raw_arrays(v, f"{path}.{k}"))
        elif isinstance(obj, (list, tuple)):
            numeric = [x for x in obj if isinstance(x, (int, float))]
            if len(numeric) == len(obj) and len(obj) >= 256:
                hits.append((path, len(obj)))
            else:
                vectors = [
                    x
                    for x in obj
                    if isinstance(x, (list, tuple))
                    and len(x) >= 16
                    and all(isinstance(y, (int, float)) for y in x)
                ]
                if len(vectors) >= 16:
                    hits.append((path, f"{len(vectors)}x{len(vectors[0])}"))
                else:
                    for i, v in enumerate(obj):
                        hits.extend(HybridStore._find_raw_arrays(v, f"{path}[{i}]"))
        return hits

    def audit_remote(self) -> list:
        """Every raw-array finding in the remote store (empty list = clean)."""
        findings = []
        for key, obj in self.remote.items():
            findings.extend(self._find_raw_arrays(obj, path=key))
        return findings

    def assert_remote_clean(self) -> None:
        findings = self.audit_remote()
        if findings:
            raise RawArrayInRemoteStore(f"raw arrays in remote store: {findings}")
