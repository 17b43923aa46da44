"""O-LoRaWAN network server: dedup/merge, security, downlink routing, ADR.

Uplink records from any number of gateways are merged per
(device, counter, payload-hash) inside a dedup window; exactly one merged
uplink comes out, MIC- and replay-checked against the device session.
Downlinks ride the class-A RX1 window of the triggering uplink (RX2 on
duty-cycle fallback), through the gateway with the best SNR unless a
steering override says otherwise.
"""

from __future__ import annotations

import hashlib
import heapq
import itertools
from collections import defaultdict, deque
from dataclasses import dataclass, field
from typing import Callable, Optional

from . import mac
from .adr import AdrProposal, propose_adr
from .constants import ConstantsRegistry, load_constants
from .du import UplinkRecord
from .e2 import E2Kind, E2Message, KpiRecord, SubscriptionTrigger

__all__ = [
    "GatewayCopy",
    "MergedUplink",
    "DownlinkItem",
    "DownlinkDirective",
    "RegistrationError",
    "NetworkServer",
]

SECONDS = 1_000_000_000


class RegistrationError(ValueError):
    pass


@dataclass(frozen=True)
class GatewayCopy:
    gateway_id: str
    snr_db: int
    rssi_dbm: int
    timestamp_ns: int


@dataclass
class MergedUplink:
    dev_addr: int
    fcnt32: int
    fport: Optional[int]
    payload_plain: bytes
    gateways: tuple[GatewayCopy, ...]
    sf: int
    bw_hz: int
    channel_index: Optional[int]
    uplink_end_ns: int
    airtime_s: float
    adr_requested: bool
    battery_pct: Optional[int] = None
    chosen_gateway: str = ""

    @property
    def best_snr_db(self) -> int:
        return max(g.snr_db for g in self.gateways)


@dataclass(frozen=True)
class DownlinkItem:
    dev_addr: int
    payload: bytes
    fport: int = 1
    priority: int = 0

    def __post_init__(self):
        if self.priority < 0:
            raise ValueError("priority must be >= 0")


@dataclass
class DownlinkDirective:
    """What a gateway needs to place one downlink into an RX window."""

    dev_addr: int
    mac_bytes: bytes
    uplink_end_ns: int
    uplink_channel_index: Optional[int]
    uplink_channel_hz: int
    uplink_sf: int
    tx_power_dbm: int
    allow_rx2_fallback: bool = True


@dataclass
class _OpenWindow:
    copies: list[UplinkRecord] = field(default_factory=list)
    fcnt32: int = 0


class NetworkServer:
    """Single logical NS event loop; state shards cleanly by device."""

    def __init__(
        self,
        ns_id: str,
        clock: Callable[[], int],
        registry: ConstantsRegistry | None = None,
        schedule: Optional[Callable[[int, Callable[[], None]], None]] = None,
        send_downlink: Optional[Callable[[str, DownlinkDirective], bool]] = None,
        as_sink: Optional[Callable[[dict], None]] = None,
        send_e2: Optional[Callable[[E2Message], None]] = None,
        dedup_window_ms: Optional[float] = None,
        default_dl_power_dbm: int = 14,
        adr_enabled: bool = True,
    ):
        self.ns_id = ns_id
        self.clock = clock
        self.registry = registry or load_constants()
        self.schedule = schedule
        self.send_downlink = send_downlink
        self.as_sink = as_sink
        self.send_e2 = send_e2
        self.dedup_window_ms = dedup_window_ms or self.registry.dedup_window_ms
        self.default_dl_power_dbm = default_dl_power_dbm
        self.adr_enabled = adr_enabled

        self.sessions: dict[int, mac.DeviceSession] = {}
        self.believed_power: dict[int, int] = {}
        self.snr_history: dict[int, deque] = {}
        self._windows: dict[tuple, _OpenWindow] = {}
        self._dl_queues: dict[int, list] = defaultdict(list)
        self._dl_seq = itertools.count()
        self.pending_adr: dict[int, AdrProposal] = {}
        self.steering_override: dict[int, str] = {}
        self.device_priority: dict[int, int] = {}
        self.known_gateways: set[str] = set()
        self.merged_log: list[MergedUplink] = []
        self._txid = itertools.count(1)
        self._sub_ids = itertools.count(1)
        self._subscriptions: dict[int, SubscriptionTrigger] = {}
        self.kpis = {
            "copies": 0,
            "merged": 0,
            "security_rejects": 0,
            "replay_rejects": 0,
            "unknown_device_rejects": 0,
            "as_records": 0,
            "downlinks_dispatched": 0,
            "downlinks_deferred": 0,
        }

    # ------------------------------------------------------------------
    # registry
    # ------------------------------------------------------------------

    def register_device(
        self,
        dev_addr: int,
        nwk_skey: bytes,
        app_skey: bytes,
        device_class: str = "A",
        initial_power_dbm: int = 14,
    ) -> mac.DeviceSession:
        if dev_addr in self.sessions:
            raise RegistrationError(f"device {dev_addr:08x} already registered")
        session = mac.DeviceSession(dev_addr, nwk_skey, app_skey, device_class=device_class)
        self.sessions[dev_addr] = session
        self.believed_power[dev_addr] = initial_power_dbm
        self.snr_history[dev_addr] = deque(maxlen=self.registry.adr_history_len)
        return session

    # ------------------------------------------------------------------
    # uplink ingest and dedup
    # ------------------------------------------------------------------

    def ingest(self, record: UplinkRecord) -> str:
        """Feed one gateway copy; returns a disposition tag for observability."""
        self.kpis["copies"] += 1
        self.known_gateways.add(record.gateway_id)
        session = self.sessions.get(record.dev_addr)
        if session is None:
            self.kpis["unknown_device_rejects"] += 1
            return "unknown_device"
        verdict = mac.parse_and_verify(record.mac_bytes, session)
        if not verdict.mic_ok:
            self.kpis["security_rejects"] += 1
            return "bad_mic"
        key = (
            record.dev_addr,
            verdict.fcnt32,
            hashlib.sha256(record.mac_bytes).digest()[:8],
        )
        window = self._windows.get(key)
        if window is not None:
            window.copies.append(record)
            return "window_joined"
        if not verdict.fcnt_ok:
            self.kpis["replay_rejects"] += 1
            return "replay"
        window = _OpenWindow(copies=[record], fcnt32=verdict.fcnt32)
        self._windows[key] = window
        delay_ns = round(self.dedup_window_ms * 1e6)
        if self.schedule is not None:
            self.schedule(delay_ns, lambda: self.close_window(key))
        return "window_opened"

    def close_window(self, key: tuple) -> Optional[MergedUplink]:
        """Close one dedup window: emit the merged uplink and drive downlinks."""
        window = self._windows.pop(key, None)
        if window is None:
            return None
        copies = window.copies
        first = copies[0]
        session = self.sessions[first.dev_addr]
        frame = mac.parse_frame(first.mac_bytes)
        session.fcnt_up = window.fcnt32 + 1  # consume the counter
        payload = (
            mac.decrypt_payload(
                session, mac.UPLINK, window.fcnt32, frame.frm_payload, frame.fport
            )
            if frame.fport is not None
            else b""
        )
        merged = MergedUplink(
            dev_addr=first.dev_addr,
            fcnt32=window.fcnt32,
            fport=frame.fport,
            payload_plain=payload,
            gateways=tuple(
                GatewayCopy(c.gateway_id, c.snr_db, c.rssi_dbm, c.timestamp_ns)
                for c in copies
            ),
            sf=first.sf,
            bw_hz=first.bw_hz,
            channel_index=first.channel_index,
            uplink_end_ns=first.timestamp_ns,
            airtime_s=first.airtime_s,
            adr_requested=frame.adr,
            battery_pct=first.battery_pct,
        )
        merged.chosen_gateway = self.select_downlink_gateway(merged)
        self.kpis["merged"] += 1
        self.merged_log.append(merged)
        self.snr_history[merged.dev_addr].append(float(merged.best_snr_db))
        self.forward_to_as(merged)
        self._emit_device_indication(merged)
        if self.adr_enabled and merged.adr_requested:
            proposal = self.adr_propose(merged.dev_addr, merged.sf)
            if proposal is not None:
                self.pending_adr[merged.dev_addr] = proposal
        self.dispatch_downlink(merged)
        return merged

    def open_window_keys(self) -> list[tuple]:
        return list(self._windows)

    # ------------------------------------------------------------------
    # AS forwarding
    # ------------------------------------------------------------------

    def forward_to_as(self, merged: MergedUplink) -> dict:
        record = {
            "dev_addr": f"{merged.dev_addr:08x}",
            "fcnt": merged.fcnt32,
            "fport": merged.fport,
            "payload_hex": merged.payload_plain.hex(),
            "gateways": [
                {"gateway_id": g.gateway_id, "snr_db": g.snr_db, "rssi_dbm": g.rssi_dbm}
                for g in merged.gateways
            ],
            "sf": merged.sf,
            "received_ns": merged.uplink_end_ns,
        }
        self.kpis["as_records"] += 1
        if self.as_sink is not None:
            self.as_sink(record)
        return record

    # ------------------------------------------------------------------
    # downlink path
    # ------------------------------------------------------------------

    def select_downlink_gateway(self, merged: MergedUplink) -> str:
        override = self.steering_override.get(merged.dev_addr)
        if override and any(g.gateway_id == override for g in merged.gateways):
            return override
        # argmax snr; ties broken toward the lexicographically smallest id
        top = max(g.snr_db for g in merged.gateways)
        return min(g.gateway_id for g in merged.gateways if g.snr_db == top)

    def queue_downlink(self, item: DownlinkItem) -> None:
        priority = max(item.priority, self.device_priority.get(item.dev_addr, 0))
        heapq.heappush(
            self._dl_queues[item.dev_addr], (-priority, next(self._dl_seq), item)
        )

    def pending_downlinks(self, dev_addr: int) -> int:
        return len(self._dl_queues[dev_addr])

    def dispatch_downlink(self, merged: MergedUplink) -> Optional[DownlinkDirective]:
        """Send at most one downlink into this uplink's RX windows."""
        dev = merged.dev_addr
        item: Optional[DownlinkItem] = None
        if self._dl_queues[dev]:
            item = heapq.heappop(self._dl_queues[dev])[2]
        adr_cmd = self.pending_adr.pop(dev, None)
        if item is None and adr_cmd is None:
            return None
        session = self.sessions[dev]
        fopts = (
            mac.encode_link_adr(adr_cmd.sf, adr_cmd.tx_power_dbm) if adr_cmd else b""
        )
        mac_bytes = mac.build_downlink(
            session,
            item.fport if item else None,
            item.payload if item else b"",
            fopts=fopts,
            adr=merged.adr_requested,
        )
        directive = DownlinkDirective(
            dev_addr=dev,
            mac_bytes=mac_bytes,
            uplink_end_ns=merged.uplink_end_ns,
            uplink_channel_index=merged.channel_index,
            uplink_channel_hz=self._channel_hz(merged.channel_index),
            uplink_sf=merged.sf,
            tx_power_dbm=self.default_dl_power_dbm,
        )
        accepted = (
            self.send_downlink(merged.chosen_gateway, directive)
            if self.send_downlink is not None
            else True
        )
        if accepted:
            self.kpis["downlinks_dispatched"] += 1
            if adr_cmd is not None:
                self.believed_power[dev] = adr_cmd.tx_power_dbm
        else:
            # both RX windows unusable: defer to the next uplink
            self.kpis["downlinks_deferred"] += 1
            if item is not None:
                self.queue_downlink(item)
            if adr_cmd is not None:
                self.pending_adr[dev] = adr_cmd
        return directive

    def _channel_hz(self, channel_index: Optional[int]) -> int:
        plan = self.registry.uplink_channels_hz
        if channel_index is not None and channel_index < len(plan):
            return plan[channel_index]
        return self.registry.rx2_channel_hz

    # ------------------------------------------------------------------
    # ADR (shared rule)
    # ------------------------------------------------------------------

    def adr_propose(self, dev_addr: int, current_sf: int) -> Optional[AdrProposal]:
        history = list(self.snr_history.get(dev_addr, ()))
        if not history:
            return None
        return propose_adr(
            history, current_sf, self.believed_power.get(dev_addr, 14), self.registry
        )

    # ------------------------------------------------------------------
    # E2 agent (same surface shape as the DU's)
    # ------------------------------------------------------------------

    def handle_e2(self, msg: E2Message) -> list[E2Message]:
        if msg.kind == E2Kind.SUBSCRIPTION_REQ:
            sub_id = next(self._sub_ids)
            self._subscriptions[sub_id] = msg.trigger or SubscriptionTrigger()
            return [
                E2Message(
                    E2Kind.SUBSCRIPTION_RESP,
                    msg.transaction_id,
                    self.ns_id,
                    subscription_id=sub_id,
                )
            ]
        if msg.kind == E2Kind.CONTROL_REQ:
            return [self._apply_control(msg)]
        return []

    def _apply_control(self, msg: E2Message) -> E2Message:
        cmd = msg.control
        reason = None
        if cmd is None:
            reason = "control request without a command"
        elif cmd.parameter_path == "report/kpi":
            ack = E2Message(E2Kind.CONTROL_ACK, msg.transaction_id, self.ns_id)
            ack.kpi = self.kpi_snapshot()
            return ack
        elif cmd.parameter_path.startswith("device/"):
            parts = cmd.parameter_path.split("/")
            addr = int(parts[1], 16) if len(parts) == 3 and _is_hex(parts[1]) else None
            if addr is None or addr not in self.sessions:
                reason = f"unknown device in path {cmd.parameter_path!r}"
            elif parts[2] == "link_adr":
                reason = self._control_link_adr(addr, cmd.value)
            elif parts[2] == "dl_gateway":
                if isinstance(cmd.value, str) and cmd.value in self.known_gateways:
                    self.steering_override[addr] = cmd.value
                else:
                    reason = f"unknown gateway {cmd.value!r}"
            elif parts[2] == "priority":
                if isinstance(cmd.value, int) and cmd.value >= 0:
                    self.device_priority[addr] = cmd.value
                else:
                    reason = f"priority {cmd.value!r} must be a non-negative integer"
            else:
                reason = f"unknown device parameter {parts[2]!r}"
        else:
            reason = f"unknown control target {cmd.parameter_path!r}"
        if reason is not None:
            return E2Message(E2Kind.CONTROL_FAIL, msg.transaction_id, self.ns_id, reason=reason)
        return E2Message(E2Kind.CONTROL_ACK, msg.transaction_id, self.ns_id)

    def _control_link_adr(self, addr: int, value) -> Optional[str]:
        if not isinstance(value, dict):
            return "link_adr value must be {'sf': .., 'power': ..}"
        sf, power = value.get("sf"), value.get("power")
        if sf not in self.registry.spreading_factors:
            return f"sf {sf!r} outside 7..12"
        if (
            not isinstance(power, int)
            or not self.registry.tx_power_min_dbm <= power <= self.registry.tx_power_max_dbm
        ):
            return f"power {power!r} outside 2..20"
        self.pending_adr[addr] = AdrProposal(sf, power)
        return None

    def _emit_device_indication(self, merged: MergedUplink) -> None:
        if self.send_e2 is None:
            return
        for sub_id, trigger in self._subscriptions.items():
            if trigger.event != "device_uplink":
                continue
            metrics = {
                "snr_db": float(merged.best_snr_db),
                "sf": float(merged.sf),
                "fcnt": float(merged.fcnt32),
                "airtime_s": merged.airtime_s,
                "tx_power_dbm": float(self.believed_power.get(merged.dev_addr, 14)),
                "gateway_count": float(len(merged.gateways)),
            }
            if merged.battery_pct is not None:
                metrics["battery_pct"] = float(merged.battery_pct)
            for copy in merged.gateways:
                metrics[f"gw_snr:{copy.gateway_id}"] = float(copy.snr_db)
            self.send_e2(
                E2Message(
                    E2Kind.INDICATION,
                    next(self._txid),
                    self.ns_id,
                    subscription_id=sub_id,
                    kpi=KpiRecord(
                        node_id=f"{self.ns_id}/dev/{merged.dev_addr:08x}",
                        timestamp_ns=self.clock(),
                        metrics=metrics,
                    ),
                )
            )

    def kpi_snapshot(self) -> KpiRecord:
        merged = self.kpis["merged"]
        return KpiRecord(
            node_id=self.ns_id,
            timestamp_ns=self.clock(),
            metrics={
                "merged_uplinks": float(merged),
                "gateway_copies": float(self.kpis["copies"]),
                "dedup_ratio": self.kpis["copies"] / merged if merged else 0.0,
                "security_rejects": float(self.kpis["security_rejects"]),
                "replay_rejects": float(self.kpis["replay_rejects"]),
                "unknown_device_rejects": float(self.kpis["unknown_device_rejects"]),
                "as_records": float(self.kpis["as_records"]),
                "downlinks_dispatched": float(self.kpis["downlinks_dispatched"]),
                "downlinks_deferred": float(self.kpis["downlinks_deferred"]),
                "queue_depth": float(sum(len(q) for q in self._dl_queues.values())),
            },
        )

    # ------------------------------------------------------------------
    # O1 surface
    # ------------------------------------------------------------------

    def o1_apply(self, params: dict) -> dict:
        if "dedup_window_ms" in params:
            self.dedup_window_ms = params["dedup_window_ms"]
        if "default_dl_power_dbm" in params:
            self.default_dl_power_dbm = params["default_dl_power_dbm"]
        return self.o1_read()

    def o1_read(self) -> dict:
        return {
            "dedup_window_ms": self.dedup_window_ms,
            "default_dl_power_dbm": self.default_dl_power_dbm,
        }


def _is_hex(text: str) -> bool:
    try:
        int(text, 16)
        return True
    except ValueError:
        return False
