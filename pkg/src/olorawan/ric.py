"""Near-RT and non-RT RAN intelligent controllers.

The near-RT RIC hosts xApps, routes E2 traffic (subscriptions are set up
synchronously on the management plane; indications and controls travel the
latency-bearing data plane), logs every control with its triggering
indication timestamp so the 10 ms..1 s loop bound is auditable, and
archives every KPI it sees. The non-RT RIC owns the A1 policy store and
hosts rApps on the scenario timescale.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional

from .a1 import A1Policy, PolicyStore
from .constants import ConstantsRegistry, load_constants
from .e2 import ControlCommand, E2Kind, E2Message, KpiRecord, SubscriptionTrigger

__all__ = [
    "E2SetupFailure",
    "ControlRecord",
    "NearRtRic",
    "NonRtRic",
]


class E2SetupFailure(RuntimeError):
    """Subscription toward an unknown or unresponsive node."""


@dataclass
class ControlRecord:
    transaction_id: int
    xapp_id: str
    command: ControlCommand
    issued_ns: int
    caused_by_ns: int
    result: Optional[str] = None  # "ack" | "fail" | "timeout_fail"
    applied_ns: Optional[int] = None
    reason: str = ""


@dataclass
class _NodeLink:
    handler: Callable[[E2Message], list[E2Message]]
    control_sender: Optional[Callable[[E2Message], None]] = None


class NearRtRic:
    """Event-driven reactor: xApps are isolated handlers invoked in order."""

    def __init__(
        self,
        ric_id: str,
        clock: Callable[[], int],
        registry: ConstantsRegistry | None = None,
    ):
        self.ric_id = ric_id
        self.clock = clock
        self.registry = registry or load_constants()
        self._nodes: dict[str, _NodeLink] = {}
        self._xapps: dict[str, object] = {}
        self._routes: dict[tuple[str, int], str] = {}  # (node, sub id) -> xapp
        self._txid = itertools.count(1)
        self.control_log: list[ControlRecord] = []
        self._open_controls: dict[int, ControlRecord] = {}
        self.kpi_archive: list[KpiRecord] = []
        self.timeout_fails = 0

    # -- topology ----------------------------------------------------------

    def register_node(
        self,
        node_id: str,
        handler: Callable[[E2Message], list[E2Message]],
        control_sender: Optional[Callable[[E2Message], None]] = None,
    ) -> None:
        self._nodes[node_id] = _NodeLink(handler, control_sender)

    def add_xapp(self, xapp) -> None:
        self._xapps[xapp.xapp_id] = xapp
        xapp.attach(self)

    # -- E2 operations --------------------------------------------------------

    def e2_subscribe(
        self, xapp_id: str, node_id: str, trigger: SubscriptionTrigger
    ) -> int:
        link = self._nodes.get(node_id)
        if link is None:
            raise E2SetupFailure(f"node {node_id!r} is not connected")
        req = E2Message(
            E2Kind.SUBSCRIPTION_REQ, next(self._txid), node_id, trigger=trigger
        )
        responses = link.handler(req)
        resp = next(
            (
                m
                for m in responses
                if m.kind == E2Kind.SUBSCRIPTION_RESP
                and m.transaction_id == req.transaction_id
            ),
            None,
        )
        if resp is None or resp.subscription_id is None:
            raise E2SetupFailure(f"node {node_id!r} rejected the subscription")
        self._routes[(node_id, resp.subscription_id)] = xapp_id
        return resp.subscription_id

    def e2_control(self, xapp_id: str, cmd: ControlCommand) -> int:
        """Route a control request; the ack/fail closes the logged record."""
        link = self._nodes.get(cmd.target_node)
        txid = next(self._txid)
        record = ControlRecord(
            transaction_id=txid,
            xapp_id=xapp_id,
            command=cmd,
            issued_ns=self.clock(),
            caused_by_ns=cmd.caused_by_ns,
        )
        self.control_log.append(record)
        self._open_controls[txid] = record
        msg = E2Message(E2Kind.CONTROL_REQ, txid, cmd.target_node, control=cmd)
        if link is None:
            self._complete(txid, "fail", f"node {cmd.target_node!r} is not connected")
            return txid
        if link.control_sender is not None:
            link.control_sender(msg)
        else:
            for response in link.handler(msg):
                self.deliver(response)
        return txid

    def deliver(self, msg: E2Message) -> None:
        """Data-plane entry for indications and control responses."""
        if msg.kind == E2Kind.INDICATION:
            if msg.kpi is not None:
                self.kpi_archive.append(msg.kpi)
            xapp_id = self._routes.get((msg.node_id, msg.subscription_id))
            xapp = self._xapps.get(xapp_id) if xapp_id else None
            if xapp is not None and msg.kpi is not None:
                xapp.on_indication(msg.kpi)
            return
        if msg.kind == E2Kind.CONTROL_ACK:
            self._complete(msg.transaction_id, "ack", "")
        elif msg.kind == E2Kind.CONTROL_FAIL:
            self._complete(msg.transaction_id, "fail", msg.reason)

    def _complete(self, txid: int, result: str, reason: str) -> None:
        record = self._open_controls.pop(txid, None)
        if record is None:
            return
        record.applied_ns = self.clock()
        deadline = record.command.deadline_ns
        if result == "ack" and deadline and record.applied_ns > deadline:
            result = "timeout_fail"
            reason = f"applied at {record.applied_ns} past deadline {deadline}"
            self.timeout_fails += 1
        record.result = result
        record.reason = reason

    # -- policies ----------------------------------------------------------------

    def on_policy(self, event: str, policy: A1Policy) -> None:
        """A1 push: prioritization becomes NS controls; the rest go to xApps."""
        if policy.policy_type == "PRIORITIZATION" and event == "put":
            for addr_hex, priority in policy.body.get("device_priorities", {}).items():
                for node_id in self._nodes:
                    if node_id.startswith("ns"):
                        self.e2_control(
                            "ric-policy",
                            ControlCommand(
                                node_id, f"device/{addr_hex.lower()}/priority", priority
                            ),
                        )
            return
        for xapp in self._xapps.values():
            xapp.on_policy(event, policy)

    # -- bookkeeping ----------------------------------------------------------------

    def completed_controls(self) -> list[ControlRecord]:
        return [r for r in self.control_log if r.result is not None]


class NonRtRic:
    """Policy-driven long-timescale controller: A1 store plus rApps."""

    def __init__(
        self,
        store: Optional[PolicyStore] = None,
        registry: ConstantsRegistry | None = None,
    ):
        self.store = store or PolicyStore()
        self.registry = registry or load_constants()
        self.recommendations: list[dict] = []
        self._near_rt_push: Optional[Callable[[str, A1Policy], None]] = None
        self.store.subscribe(self._on_store_event)

    def connect_near_rt(self, push: Callable[[str, A1Policy], None]) -> None:
        """Attach the A1 push path (the sim wiring adds its latency)."""
        self._near_rt_push = push
        for ptype in ("PRIORITIZATION", "ENERGY_SAVING", "SF_BOUNDS"):
            for policy in self.store.active(ptype):
                push("put", policy)

    def _on_store_event(self, event: str, policy: Optional[A1Policy]) -> None:
        if self._near_rt_push is not None and policy is not None:
            self._near_rt_push(event, policy)

    def run_energy_rapp(self, archive: Iterable[KpiRecord]) -> Optional[dict]:
        from .xapps import rapp_energy_efficiency

        draft = rapp_energy_efficiency(archive, self.registry)
        if draft is not None:
            self.recommendations.append(draft)
        return draft
