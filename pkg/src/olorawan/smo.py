"""O1-lite management: config push with rollback, faults, KPIs, lifecycle.

NETCONF/YANG semantics at desk scale: schema-validated config documents
pushed to registered nodes with read-back verification, retained rollback
state, an append-only fault log with an active-fault set, KPI collection
with per-node uptime, and inventory lifecycle (register/decommission).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Optional

from .constants import validate_schemas
from .e2 import KpiRecord

__all__ = [
    "ConfigDocument",
    "FaultEvent",
    "SEVERITIES",
    "O1RejectionError",
    "NodeOfflineDeferred",
    "LifecycleConflictError",
    "FaultConsistencyError",
    "Smo",
]

SEVERITIES = ("CRITICAL", "MAJOR", "MINOR", "WARNING")


@dataclass(frozen=True)
class ConfigDocument:
    document_id: str
    target: str
    params: dict
    schema_version: str = "1"


@dataclass
class FaultEvent:
    node: str
    severity: str
    code: str
    description: str
    timestamp_ns: int
    cleared: bool = False

    def __post_init__(self):
        if self.severity not in SEVERITIES:
            raise ValueError(f"severity {self.severity!r} not in {SEVERITIES}")

    def to_dict(self) -> dict:
        return {
            "node": self.node,
            "severity": self.severity,
            "code": self.code,
            "description": self.description,
            "timestamp_ns": self.timestamp_ns,
            "cleared": self.cleared,
        }


class O1RejectionError(ValueError):
    def __init__(self, violations: list[str]):
        super().__init__("; ".join(violations))
        self.violations = violations


class NodeOfflineDeferred(RuntimeError):
    """Config accepted but deferred until the node comes back."""


class LifecycleConflictError(RuntimeError):
    pass


class FaultConsistencyError(ValueError):
    """Clear event without a matching active raise."""


@dataclass
class _InventoryEntry:
    kind: str  # "ru" | "du" | "ns"
    node: object
    online: bool = True
    decommissioned: bool = False
    applied_version: int = 0
    last_doc: Optional[ConfigDocument] = None
    rollback_params: Optional[dict] = None
    deferred: list[ConfigDocument] = field(default_factory=list)


class Smo:
    """Single management event loop around an inventory of managed nodes."""

    def __init__(self, clock: Callable[[], int]):
        self.clock = clock
        self.inventory: dict[str, _InventoryEntry] = {}
        self.fault_log: list[FaultEvent] = []
        self.active_faults: dict[tuple[str, str], int] = {}
        self._fault_subscribers: list[Callable[[FaultEvent], None]] = []
        self._versions = itertools.count(1)

    # ------------------------------------------------------------------
    # lifecycle
    # ------------------------------------------------------------------

    def o1_lifecycle(self, node_id: str, action: str, node: object = None,
                     kind: str = "") -> dict:
        if action == "REGISTER":
            if node_id in self.inventory and not self.inventory[node_id].decommissioned:
                raise LifecycleConflictError(f"{node_id} is already registered")
            if node is None or kind not in ("ru", "du", "ns"):
                raise LifecycleConflictError("REGISTER needs a node object and kind ru/du/ns")
            self.inventory[node_id] = _InventoryEntry(kind=kind, node=node)
        elif action == "DECOMMISSION":
            entry = self.inventory.get(node_id)
            if entry is None or entry.decommissioned:
                raise LifecycleConflictError(f"{node_id} is not an active inventory entry")
            entry.decommissioned = True
            entry.online = False
        else:
            raise LifecycleConflictError(f"unknown lifecycle action {action!r}")
        return self.inventory_snapshot()

    def inventory_snapshot(self) -> dict:
        return {
            node_id: {
                "kind": e.kind,
                "online": e.online,
                "decommissioned": e.decommissioned,
                "applied_version": e.applied_version,
            }
            for node_id, e in sorted(self.inventory.items())
        }

    def set_online(self, node_id: str, online: bool) -> None:
        entry = self._entry(node_id)
        entry.online = online
        if online:
            deferred, entry.deferred = entry.deferred, []
            for doc in deferred:
                self.o1_apply_config(doc)

    def _entry(self, node_id: str) -> _InventoryEntry:
        entry = self.inventory.get(node_id)
        if entry is None:
            raise LifecycleConflictError(f"{node_id} is not in the inventory")
        return entry

    # ------------------------------------------------------------------
    # configuration
    # ------------------------------------------------------------------

    def o1_apply_config(self, doc: ConfigDocument) -> dict:
        """Validate, push, verify read-back; returns the applied version."""
        entry = self._entry(doc.target)
        if entry.decommissioned:
            raise LifecycleConflictError(f"{doc.target} is decommissioned")
        violations = validate_schemas(doc.params, f"o1/{entry.kind}")
        if violations:
            raise O1RejectionError(violations)
        if not entry.online:
            entry.deferred.append(doc)
            raise NodeOfflineDeferred(f"{doc.target} is offline; config deferred")

        before = entry.node.o1_read()
        if all(before.get(k) == v for k, v in doc.params.items()):
            # already in effect: idempotent, same applied-version state
            return {"target": doc.target, "applied_version": entry.applied_version,
                    "changed": False}
        entry.rollback_params = before
        after = entry.node.o1_apply(doc.params)
        mismatches = [
            f"{k}: wrote {v!r}, read back {after.get(k)!r}"
            for k, v in doc.params.items()
            if after.get(k) != v
        ]
        if mismatches:
            raise O1RejectionError(mismatches)
        entry.applied_version = next(self._versions)
        entry.last_doc = doc
        return {"target": doc.target, "applied_version": entry.applied_version,
                "changed": True}

    def o1_rollback(self, node_id: str) -> dict:
        entry = self._entry(node_id)
        if entry.rollback_params is None:
            raise LifecycleConflictError(f"no rollback state retained for {node_id}")
        params = entry.rollback_params
        entry.rollback_params = None
        entry.node.o1_apply(params)
        entry.applied_version = next(self._versions)
        return entry.node.o1_read()

    def o1_read(self, node_id: str) -> dict:
        return self._entry(node_id).node.o1_read()

    # ------------------------------------------------------------------
    # faults
    # ------------------------------------------------------------------

    def subscribe_faults(self, fn: Callable[[FaultEvent], None]) -> None:
        self._fault_subscribers.append(fn)

    def o1_fault(self, event: FaultEvent) -> None:
        key = (event.node, event.code)
        if event.cleared:
            if self.active_faults.get(key, 0) <= 0:
                raise FaultConsistencyError(
                    f"clear for {key} without an active raise"
                )
            self.active_faults[key] = 0
        else:
            self.active_faults[key] = self.active_faults.get(key, 0) + 1
        if self.fault_log and event.timestamp_ns < self.fault_log[-1].timestamp_ns:
            event.timestamp_ns = self.fault_log[-1].timestamp_ns
        self.fault_log.append(event)
        for fn in self._fault_subscribers:
            fn(event)

    def active_fault_set(self) -> dict[tuple[str, str], int]:
        return {k: v for k, v in self.active_faults.items() if v > 0}

    # ------------------------------------------------------------------
    # KPI collection
    # ------------------------------------------------------------------

    def uptime_fraction(self, node_id: str, window_start_ns: int,
                        window_end_ns: int) -> float:
        """1 minus the fraction covered by CRITICAL fault intervals."""
        if window_end_ns <= window_start_ns:
            return 1.0
        down = 0
        open_since: dict[str, int] = {}
        for ev in self.fault_log:
            if ev.node != node_id or ev.severity != "CRITICAL":
                continue
            if not ev.cleared and ev.code not in open_since:
                open_since[ev.code] = ev.timestamp_ns
            elif ev.cleared and ev.code in open_since:
                start = max(open_since.pop(ev.code), window_start_ns)
                end = min(ev.timestamp_ns, window_end_ns)
                down += max(end - start, 0)
        for start_ts in open_since.values():
            down += max(window_end_ns - max(start_ts, window_start_ns), 0)
        return max(0.0, 1.0 - down / (window_end_ns - window_start_ns))

    def o1_collect_kpis(self, window_start_ns: int, window_end_ns: int) -> dict:
        """Aggregate per-node KPI snapshots with uptime over the window."""
        snapshot: dict[str, dict] = {}
        for node_id, entry in sorted(self.inventory.items()):
            if entry.decommissioned:
                continue
            metrics: dict[str, float] = {}
            kpi = getattr(entry.node, "kpi_snapshot", None)
            if callable(kpi):
                record: KpiRecord = kpi()
                metrics = dict(record.metrics)
            metrics["uptime_fraction"] = self.uptime_fraction(
                node_id, window_start_ns, window_end_ns
            )
            snapshot[node_id] = metrics
        return snapshot
