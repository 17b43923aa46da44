"""O-LoRaWAN distributed unit: high-PHY, MAC handling, forwarding, E2 agent.

Uplink: fronthaul section -> (optional IQ demodulation) -> Gray decode,
deinterleave, FEC, dewhiten, CRC check -> MAC disassembly -> uplink
record to the network server. Downlink: MAC bytes -> coding chain ->
DL section aimed at a transmission slot, with per-sub-band duty-cycle
accounting. The E2 agent exposes KPIs and a small control dictionary.
"""

from __future__ import annotations

import itertools
import json
from collections import defaultdict, deque
from dataclasses import dataclass, replace
from typing import Callable, Optional

from . import mac, phy
from .adr import AdrProposal, propose_adr
from .constants import ConstantsRegistry, load_constants
from .e2 import ControlCommand, E2Kind, E2Message, KpiRecord, SubscriptionTrigger
from .fronthaul import (
    BW_CODE_FROM_HZ,
    DL,
    UL,
    LoRaWANSection,
    decode_frame,
    validate_section,
)
from .ru import pack_dl_symbols

__all__ = [
    "DuConfig",
    "UplinkRecord",
    "DownlinkParams",
    "RxSlot",
    "DuConfigError",
    "DuIntegrityError",
    "DuRangeError",
    "DutyCycleError",
    "DistributedUnit",
]

SECONDS = 1_000_000_000  # ns


class DuConfigError(ValueError):
    pass


class DuIntegrityError(ValueError):
    """CRC or FEC failure on an uplink; counted, never forwarded."""


class DuRangeError(ValueError):
    pass


class DutyCycleError(RuntimeError):
    """Transmitting would exceed the sub-band duty-cycle budget."""


@dataclass(frozen=True)
class DuConfig:
    rx1_delay_s: float = 1.0
    rx2_delay_s: float = 2.0
    rx2_sf: int = 12
    rx2_channel_hz: int = 869525000
    duty_cycle_limit: float = 0.01
    adr_enabled: bool = True
    dl_cr: int = 1
    dl_preamble_len: int = 8
    bw_hz: int = 125000

    def __post_init__(self):
        if not 0 < self.rx1_delay_s < self.rx2_delay_s:
            raise DuConfigError("need rx2_delay_s > rx1_delay_s > 0")
        if not 0 < self.duty_cycle_limit <= 1:
            raise DuConfigError("duty_cycle_limit must be in (0, 1]")
        if self.rx2_sf not in (7, 8, 9, 10, 11, 12):
            raise DuConfigError(f"rx2_sf {self.rx2_sf} outside 7..12")


@dataclass
class UplinkRecord:
    """One decoded uplink with link metadata, as forwarded to the NS."""

    gateway_id: str
    mac_bytes: bytes
    dev_addr: int
    fcnt: int
    snr_db: int
    rssi_dbm: int
    timestamp_ns: int
    sf: int
    bw_hz: int
    channel_index: Optional[int]
    airtime_s: float
    battery_pct: Optional[int] = None
    corrected_codewords: int = 0
    mic_present: bool = True

    def canonical(self) -> str:
        """Stable serialization used by the split-equivalence check."""
        return json.dumps(
            {
                "gateway_id": self.gateway_id,
                "mac": self.mac_bytes.hex(),
                "dev_addr": f"{self.dev_addr:08x}",
                "fcnt": self.fcnt,
                "snr_db": self.snr_db,
                "rssi_dbm": self.rssi_dbm,
                "timestamp_ns": self.timestamp_ns,
                "sf": self.sf,
                "bw_hz": self.bw_hz,
                "channel_index": self.channel_index,
                "battery_pct": self.battery_pct,
            },
            sort_keys=True,
        )


@dataclass(frozen=True)
class DownlinkParams:
    sf: int
    tx_power_dbm: int
    slot_ns: int
    channel_index: Optional[int]  # None = RX2 channel
    channel_hz: int


@dataclass(frozen=True)
class RxSlot:
    time_ns: int
    channel_hz: int
    channel_index: Optional[int]
    sf: int


class DistributedUnit:
    """One DU per gateway; single-threaded, event-driven."""

    def __init__(
        self,
        du_id: str,
        cfg: DuConfig,
        clock: Callable[[], int],
        registry: ConstantsRegistry | None = None,
        send_to_ns: Optional[Callable[[UplinkRecord], bool]] = None,
        send_e2: Optional[Callable[[E2Message], None]] = None,
        schedule: Optional[Callable[[int, Callable[[], None]], None]] = None,
        gateway_id: Optional[str] = None,
    ):
        self.du_id = du_id
        self.gateway_id = gateway_id or du_id
        self.cfg = cfg
        self.clock = clock
        self.registry = registry or load_constants()
        self.send_to_ns = send_to_ns  # returns True when the NS took delivery
        self.send_e2 = send_e2
        self.schedule = schedule  # (delay_ns, fn)
        self.retry_queue: deque[UplinkRecord] = deque()
        self.dropped_records = 0
        self._dl_airtime: dict[str, deque[tuple[int, float]]] = defaultdict(deque)
        self._seen_devices: set[int] = set()
        self._dl_power_override: dict[int, int] = {}
        self._txid = itertools.count(1)
        self._subscriptions: dict[int, SubscriptionTrigger] = {}
        self._sub_ids = itertools.count(1)
        self.kpis = {
            "uplinks_ok": 0,
            "integrity_errors": 0,
            "parse_errors": 0,
            "downlinks_built": 0,
            "duty_blocked": 0,
            "ns_deliveries": 0,
            "snr_sum": 0.0,
        }

    # ------------------------------------------------------------------
    # uplink processing
    # ------------------------------------------------------------------

    def handle_fronthaul(self, frame_bytes: bytes) -> Optional[UplinkRecord]:
        """Modular-mode entry: decode the eCPRI frame, process, forward."""
        section = decode_frame(frame_bytes)
        try:
            record = self.process_uplink(section)
        except (DuIntegrityError, mac.MacParseError):
            return None  # counted by process_uplink
        self.forward_to_ns(record)
        return record

    def handle_section(self, section: LoRaWANSection) -> Optional[UplinkRecord]:
        """Legacy-mode entry: same pipeline with the codec bypassed."""
        try:
            record = self.process_uplink(section)
        except (DuIntegrityError, mac.MacParseError):
            return None
        self.forward_to_ns(record)
        return record

    def process_uplink(self, section: LoRaWANSection) -> UplinkRecord:
        """Decode one UL section into an uplink record.

        Raises :class:`DuIntegrityError` on CRC/FEC failure and
        :class:`mac.MacParseError` on malformed MAC bytes; both are counted
        and nothing is forwarded.
        """
        violations = validate_section(section)
        if violations or section.direction != UL:
            raise DuRangeError(f"invalid UL section: {violations or 'wrong direction'}")
        p = phy.PhyParams(
            sf=section.spreading_factor,
            bw_hz=section.bw_hz,
            preamble_len=section.preamble_length or self.registry.default_preamble_len,
        )
        if section.i_samples is not None and section.q_samples is not None:
            # IQ passthrough: demodulate here (the sophisticated-demodulation path)
            buf = phy.IQBuffer(
                [complex(i, q) for i, q in zip(section.i_samples, section.q_samples)],
                p.bw_hz,
            )
            det = phy.preamble_detect(buf, p)
            if not det.found:
                self.kpis["integrity_errors"] += 1
                raise DuIntegrityError("no preamble in passthrough IQ")
            usable = phy.IQBuffer(buf.samples[det.offset :], p.bw_hz)
            symbols = [s for s, _ in phy.demodulate_stream(usable, p, det.cfo_bins % p.n_chips)]
        else:
            symbols = [s for s, _ in section.demodulation_info]

        try:
            recovered = phy.phy_recover(symbols, p)
        except (phy.PhyIntegrityError, phy.PhyShapeError) as exc:
            self.kpis["integrity_errors"] += 1
            raise DuIntegrityError(f"uplink PHY recovery failed: {exc}") from exc
        if recovered.crc_present and not recovered.crc_ok:
            self.kpis["integrity_errors"] += 1
            raise DuIntegrityError("uplink payload CRC mismatch")

        try:
            frame = self._security_passthrough(recovered.payload)
        except mac.MacParseError:
            self.kpis["parse_errors"] += 1
            raise

        record = UplinkRecord(
            gateway_id=self.gateway_id,
            mac_bytes=recovered.payload,
            dev_addr=frame.dev_addr,
            fcnt=frame.fcnt,
            snr_db=section.uplink_snr_db,
            rssi_dbm=section.uplink_rssi_dbm,
            timestamp_ns=section.timestamp_reception,
            sf=p.sf,
            bw_hz=p.bw_hz,
            channel_index=section.channel_index,
            airtime_s=self._frame_airtime(p, len(recovered.payload)),
            battery_pct=section.battery_status,
            corrected_codewords=recovered.corrected,
        )
        self._seen_devices.add(frame.dev_addr)
        self.kpis["uplinks_ok"] += 1
        self.kpis["snr_sum"] += section.uplink_snr_db
        self._emit_device_indication(record)
        return record

    def _security_passthrough(self, mac_bytes: bytes) -> mac.MacFrame:
        """Structural security check only; session keys stay in the NS."""
        return mac.parse_frame(mac_bytes)

    def _frame_airtime(self, p: phy.PhyParams, payload_len: int) -> float:
        nsym = phy.payload_symbol_count(p, payload_len)
        return p.symbol_time_s * (p.preamble_len + 4.25 + nsym)

    # ------------------------------------------------------------------
    # forwarding with a bounded retry queue
    # ------------------------------------------------------------------

    def forward_to_ns(self, record: UplinkRecord) -> bool:
        """Deliver to the NS exactly once; queue with drop-oldest on failure."""
        if self.send_to_ns is not None and self.send_to_ns(record):
            self.kpis["ns_deliveries"] += 1
            return True
        limit = self.registry.ns_retry_queue_limit
        if len(self.retry_queue) >= limit:
            self.retry_queue.popleft()
            self.dropped_records += 1
        self.retry_queue.append(record)
        return False

    def flush_retry_queue(self) -> int:
        """Retry queued records (oldest first); returns how many got through."""
        delivered = 0
        while self.retry_queue:
            record = self.retry_queue[0]
            if self.send_to_ns is None or not self.send_to_ns(record):
                break
            self.retry_queue.popleft()
            self.kpis["ns_deliveries"] += 1
            delivered += 1
        return delivered

    # ------------------------------------------------------------------
    # downlink
    # ------------------------------------------------------------------

    def schedule_rx_windows(
        self, uplink_end_ns: int, uplink_channel_hz: int,
        uplink_channel_index: Optional[int], uplink_sf: int
    ) -> tuple[RxSlot, RxSlot]:
        rx1 = RxSlot(
            uplink_end_ns + round(self.cfg.rx1_delay_s * SECONDS),
            uplink_channel_hz,
            uplink_channel_index,
            uplink_sf,
        )
        rx2 = RxSlot(
            uplink_end_ns + round(self.cfg.rx2_delay_s * SECONDS),
            self.cfg.rx2_channel_hz,
            None,
            self.cfg.rx2_sf,
        )
        return rx1, rx2

    def build_downlink(self, mac_bytes: bytes, tx: DownlinkParams) -> LoRaWANSection:
        """Run the DL coding chain and author a DL section for the RU."""
        if not (
            self.registry.tx_power_min_dbm
            <= tx.tx_power_dbm
            <= self.registry.tx_power_max_dbm
        ):
            raise DuRangeError(f"tx power {tx.tx_power_dbm} dBm outside 2..20")
        frame = mac.parse_frame(mac_bytes)
        power = self._dl_power_override.get(frame.dev_addr, tx.tx_power_dbm)
        p = phy.PhyParams(
            sf=tx.sf, bw_hz=self.cfg.bw_hz, cr=self.cfg.dl_cr,
            preamble_len=self.cfg.dl_preamble_len,
        )
        symbols = phy.phy_assemble(mac_bytes, p)[p.preamble_len :]
        airtime = self._frame_airtime(p, len(mac_bytes))
        self._charge_duty(tx.channel_hz, tx.slot_ns, airtime)
        self.kpis["downlinks_built"] += 1
        return LoRaWANSection(
            direction=DL,
            spreading_factor=tx.sf,
            bandwidth_code=BW_CODE_FROM_HZ[self.cfg.bw_hz],
            device_address=frame.dev_addr,
            dl_payload=pack_dl_symbols(symbols),
            tx_power_dbm=power,
            transmission_slot=tx.slot_ns,
            channel_index=tx.channel_index,
            preamble_length=self.cfg.dl_preamble_len,
        )

    def _charge_duty(self, channel_hz: int, slot_ns: int, airtime_s: float) -> None:
        band = self.registry.sub_band_of(channel_hz)
        log = self._dl_airtime[band]
        window_start = slot_ns - 3600 * SECONDS
        while log and log[0][0] < window_start:
            log.popleft()
        used = sum(a for _, a in log)
        if used + airtime_s > self.cfg.duty_cycle_limit * 3600.0:
            self.kpis["duty_blocked"] += 1
            raise DutyCycleError(
                f"sub-band {band}: {used + airtime_s:.3f} s would exceed "
                f"{self.cfg.duty_cycle_limit * 3600.0:.1f} s per hour"
            )
        log.append((slot_ns, airtime_s))

    def duty_usage_s(self, band: str) -> float:
        return sum(a for _, a in self._dl_airtime[band])

    # ------------------------------------------------------------------
    # ADR proposal (shared rule)
    # ------------------------------------------------------------------

    def adr_propose(
        self, history: list[UplinkRecord], current_power_dbm: int
    ) -> Optional[AdrProposal]:
        if not history:
            return None
        return propose_adr(
            [r.snr_db for r in history], history[-1].sf, current_power_dbm, self.registry
        )

    # ------------------------------------------------------------------
    # E2 agent
    # ------------------------------------------------------------------

    def handle_e2(self, msg: E2Message) -> list[E2Message]:
        """SUBSCRIPTION -> ack + periodic indications; CONTROL -> apply + ack."""
        if msg.kind == E2Kind.SUBSCRIPTION_REQ:
            sub_id = next(self._sub_ids)
            trigger = msg.trigger or SubscriptionTrigger()
            self._subscriptions[sub_id] = trigger
            if trigger.period_ns > 0 and self.schedule is not None:
                self._schedule_periodic(sub_id, trigger.period_ns)
            return [
                E2Message(
                    E2Kind.SUBSCRIPTION_RESP,
                    msg.transaction_id,
                    self.du_id,
                    subscription_id=sub_id,
                )
            ]
        if msg.kind == E2Kind.CONTROL_REQ:
            return [self._apply_control(msg)]
        return []

    def _schedule_periodic(self, sub_id: int, period_ns: int) -> None:
        def tick():
            if sub_id not in self._subscriptions:
                return
            self._emit_indication(sub_id, self.kpi_snapshot())
            self.schedule(period_ns, tick)

        self.schedule(period_ns, tick)

    def _emit_indication(self, sub_id: int, kpi: KpiRecord) -> None:
        if self.send_e2 is None:
            return
        self.send_e2(
            E2Message(
                E2Kind.INDICATION,
                next(self._txid),
                self.du_id,
                subscription_id=sub_id,
                kpi=kpi,
            )
        )

    def _emit_device_indication(self, record: UplinkRecord) -> None:
        for sub_id, trigger in self._subscriptions.items():
            if trigger.event == "uplink":
                self._emit_indication(
                    sub_id,
                    KpiRecord(
                        node_id=f"{self.du_id}/dev/{record.dev_addr:08x}",
                        timestamp_ns=self.clock(),
                        metrics={
                            "snr_db": float(record.snr_db),
                            "rssi_dbm": float(record.rssi_dbm),
                            "sf": float(record.sf),
                            "fcnt": float(record.fcnt),
                            "airtime_s": record.airtime_s,
                        },
                    ),
                )

    def _apply_control(self, msg: E2Message) -> E2Message:
        cmd = msg.control
        fail_reason = None
        if cmd is None:
            fail_reason = "control request without a command"
        else:
            path = cmd.parameter_path
            if path in ("rx1_delay_s", "rx2_delay_s", "rx2_sf", "rx2_channel_hz",
                        "duty_cycle_limit", "adr_enabled"):
                try:
                    self.cfg = replace(self.cfg, **{path: cmd.value})
                except (DuConfigError, TypeError) as exc:
                    fail_reason = str(exc)
            elif path == "report/kpi":
                pass  # ack plus an immediate indication below
            elif path.startswith("device/"):
                parts = path.split("/")
                try:
                    addr = int(parts[1], 16)
                except ValueError:
                    addr = -1
                if addr not in self._seen_devices:
                    fail_reason = f"unknown device {parts[1]}"
                elif len(parts) == 3 and parts[2] == "dl_tx_power_dbm":
                    if (
                        isinstance(cmd.value, int)
                        and self.registry.tx_power_min_dbm
                        <= cmd.value
                        <= self.registry.tx_power_max_dbm
                    ):
                        self._dl_power_override[addr] = cmd.value
                    else:
                        fail_reason = f"dl power {cmd.value!r} outside 2..20"
                else:
                    fail_reason = f"unknown device parameter {path}"
            else:
                fail_reason = f"unknown control target {path}"
        if fail_reason is not None:
            return E2Message(
                E2Kind.CONTROL_FAIL, msg.transaction_id, self.du_id, reason=fail_reason
            )
        ack = E2Message(E2Kind.CONTROL_ACK, msg.transaction_id, self.du_id)
        if cmd.parameter_path == "report/kpi":
            ack.kpi = self.kpi_snapshot()
        return ack

    def kpi_snapshot(self) -> KpiRecord:
        n = self.kpis["uplinks_ok"]
        return KpiRecord(
            node_id=self.du_id,
            timestamp_ns=self.clock(),
            metrics={
                "uplinks_ok": float(n),
                "integrity_errors": float(self.kpis["integrity_errors"]),
                "parse_errors": float(self.kpis["parse_errors"]),
                "downlinks_built": float(self.kpis["downlinks_built"]),
                "duty_blocked": float(self.kpis["duty_blocked"]),
                "queue_depth": float(len(self.retry_queue)),
                "dropped_records": float(self.dropped_records),
                "mean_snr_db": self.kpis["snr_sum"] / n if n else 0.0,
            },
        )

    # ------------------------------------------------------------------
    # O1 surface
    # ------------------------------------------------------------------

    def o1_apply(self, params: dict) -> dict:
        try:
            self.cfg = replace(self.cfg, **params)
        except TypeError as exc:
            raise DuConfigError(f"unknown DU config key: {exc}") from exc
        return self.o1_read()

    def o1_read(self) -> dict:
        return {
            "rx1_delay_s": self.cfg.rx1_delay_s,
            "rx2_delay_s": self.cfg.rx2_delay_s,
            "rx2_sf": self.cfg.rx2_sf,
            "rx2_channel_hz": self.cfg.rx2_channel_hz,
            "duty_cycle_limit": self.cfg.duty_cycle_limit,
            "adr_enabled": self.cfg.adr_enabled,
        }
