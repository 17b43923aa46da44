"""Scenario execution: wiring, radio propagation, audits, metrics report.

One run composes devices, a radio channel with capture/cross-sf collision
rules, per-gateway RU+DU pairs (wired through the fronthaul codec in
modular mode, or passing section objects in-process in legacy mode), one
network server, optionally the RIC planes, and an SMO inventory. All
randomness derives from the scenario seed through keyed seed sequences,
so identical (scenario, seed) runs are bit-identical and the legacy and
modular wirings see identical radio realizations.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .. import phy
from ..a1 import PolicyStore
from ..constants import load_constants
from ..du import (
    DistributedUnit,
    DuConfig,
    DownlinkParams,
    DutyCycleError,
    DuRangeError,
)
from ..e2 import E2Message, KpiRecord, SubscriptionTrigger
from ..fronthaul import decode_frame, encode_frame
from ..netserver import DownlinkDirective, DownlinkItem, NetworkServer
from ..ric import NearRtRic, NonRtRic
from ..ru import RadioEvent, RadioUnit, RuConfig
from ..smo import Smo
from ..xapps import EnergyXapp, GatewaySteeringXapp, SfAdjustmentXapp
from .channel import ChannelParams, CollisionEntry, collision_resolve, noise_floor_dbm, path_loss_db
from .devices import EndDevice, Transmission
from .events import Simulator
from .scenario import MODULAR, Scenario

__all__ = ["AuditFailure", "RunResult", "run_scenario"]

SECONDS = 1_000_000_000
RUN_GRACE_S = 5.0  # lets trailing dedup windows and RX2 slots complete


class AuditFailure(RuntimeError):
    pass


@dataclass
class RunResult:
    report: dict
    capture_frames: list[bytes] = field(default_factory=list)
    kpi_archive: list[KpiRecord] = field(default_factory=list)
    as_records: list[dict] = field(default_factory=list)
    fault_log: list[dict] = field(default_factory=list)

    @property
    def audit_ok(self) -> bool:
        return self.report["audits"]["all_ok"]

    def report_json(self) -> str:
        return json.dumps(self.report, sort_keys=True, indent=2) + "\n"


@dataclass
class _TxState:
    tx: Transmission
    rx: dict[str, tuple[float, float]] = field(default_factory=dict)  # gw -> (power, snr)
    gw_outcome: dict[str, str] = field(default_factory=dict)
    base_iq: Optional[np.ndarray] = None
    classification: str = ""


@dataclass
class _Gateway:
    gateway_id: str
    position_m: tuple[float, float]
    ru: RadioUnit
    du: DistributedUnit


def _distance(a: tuple[float, float], b: tuple[float, float]) -> float:
    return max(math.hypot(a[0] - b[0], a[1] - b[1]), 1e-3)


class _Run:
    def __init__(self, sc: Scenario):
        self.sc = sc
        self.registry = load_constants()
        self.sim = Simulator()
        self.modular = sc.mode == MODULAR
        reg = self.registry
        self.fh_lat = round(reg.fronthaul_latency_s * SECONDS) if self.modular else 0
        self.bh_lat = round(reg.backhaul_latency_s * SECONDS)
        self.e2_lat = round(reg.e2_latency_s * SECONDS)
        self.a1_lat = round(reg.a1_push_latency_s * SECONDS)

        self.devices: dict[int, EndDevice] = {
            spec.dev_addr: EndDevice(spec, reg, sc.seed) for spec in sc.devices
        }
        self.transmissions: list[_TxState] = []
        self.capture_frames: list[bytes] = []
        self.as_records: list[dict] = []
        self.dl_emissions: list[dict] = []
        self.dl_delivered = 0
        self.ul_frames = 0
        self.dl_frames = 0
        self._dl_counter = 0

        self.ns = NetworkServer(
            "ns-0",
            clock=self.sim.clock,
            registry=reg,
            schedule=self.sim.schedule_in,
            send_downlink=self._ns_send_downlink,
            as_sink=self.as_records.append,
            adr_enabled=sc.ric.adr_driver == "ns",
        )
        for spec in sc.devices:
            nwk, app = spec.keys()
            self.ns.register_device(
                spec.dev_addr, nwk, app, spec.device_class, spec.tx_power_dbm
            )

        self.gateways: dict[str, _Gateway] = {}
        for gw_spec in sc.gateways:
            ru_params = dict(gw_spec.ru_params)
            ru_params.setdefault("channels_hz", list(reg.uplink_channels_hz))
            ru_params.setdefault("noise_figure_db", sc.channel.noise_figure_db)
            ru_cfg = RuConfig(
                channels_hz=tuple(ru_params.pop("channels_hz")),
                listening_sfs=tuple(ru_params.pop("listening_sfs", reg.spreading_factors)),
                noise_figure_db=ru_params.pop("noise_figure_db"),
                tx_enabled=ru_params.pop("tx_enabled", True),
                reporting_period_s=ru_params.pop("reporting_period_s", 30.0),
                iq_passthrough=ru_params.pop("iq_passthrough", False),
            )
            du_kwargs = {"rx2_sf": reg.rx2_sf, "rx2_channel_hz": reg.rx2_channel_hz}
            du_kwargs.update(gw_spec.du_params)
            du_cfg = DuConfig(**du_kwargs)
            gid = gw_spec.gateway_id
            ru = RadioUnit(f"{gid}/ru", ru_cfg, self.sim.clock, reg)
            du = DistributedUnit(
                f"{gid}/du",
                du_cfg,
                self.sim.clock,
                reg,
                send_to_ns=self._du_sender(),
                schedule=self.sim.schedule_in,
                gateway_id=gid,
            )
            self.gateways[gid] = _Gateway(gid, gw_spec.position_m, ru, du)

        self.smo = Smo(self.sim.clock)
        for gid, gw in self.gateways.items():
            self.smo.o1_lifecycle(gw.ru.ru_id, "REGISTER", gw.ru, "ru")
            self.smo.o1_lifecycle(gw.du.du_id, "REGISTER", gw.du, "du")
        self.smo.o1_lifecycle("ns-0", "REGISTER", self.ns, "ns")

        self.ric: Optional[NearRtRic] = None
        self.non_rt: Optional[NonRtRic] = None
        if sc.ric.enabled:
            self._wire_ric()

    # ------------------------------------------------------------------
    # wiring helpers
    # ------------------------------------------------------------------

    def _du_sender(self):
        def send(record) -> bool:
            self.sim.schedule_in(self.bh_lat, lambda: self.ns.ingest(record))
            return True

        return send

    def _e2_emitter(self):
        def emit(msg: E2Message) -> None:
            self.sim.schedule_in(self.e2_lat, lambda: self.ric.deliver(msg))

        return emit

    def _e2_control_sender(self, node):
        def send(msg: E2Message) -> None:
            def arrive():
                for response in node.handle_e2(msg):
                    self.sim.schedule_in(self.e2_lat, lambda r=response: self.ric.deliver(r))

            self.sim.schedule_in(self.e2_lat, arrive)

        return send

    def _wire_ric(self) -> None:
        sc = self.sc
        self.ric = NearRtRic("ric-0", self.sim.clock, self.registry)
        self.ns.send_e2 = self._e2_emitter()
        self.ric.register_node(
            "ns-0", self.ns.handle_e2, control_sender=self._e2_control_sender(self.ns)
        )
        for gw in self.gateways.values():
            gw.du.send_e2 = self._e2_emitter()
            self.ric.register_node(
                gw.du.du_id, gw.du.handle_e2,
                control_sender=self._e2_control_sender(gw.du),
            )

        xapp_names = set(sc.ric.xapps)
        if sc.ric.adr_driver == "xapp":
            xapp_names.add("sf_adjustment")
        for name in sorted(xapp_names):
            if name == "sf_adjustment":
                xapp = SfAdjustmentXapp("ns-0", self.registry)
            elif name == "gateway_steering":
                xapp = GatewaySteeringXapp("ns-0", self.registry)
            elif name == "energy":
                xapp = EnergyXapp("ns-0", self.registry)
            else:
                continue
            self.ric.add_xapp(xapp)
            self.ric.e2_subscribe(
                xapp.xapp_id, "ns-0", SubscriptionTrigger(event="device_uplink")
            )
        # periodic node KPIs for the archive
        period = round(self.registry.control_period_s * SECONDS)
        for gw in self.gateways.values():
            self.ric.e2_subscribe(
                "archive", gw.du.du_id, SubscriptionTrigger(period_ns=period)
            )

        store = PolicyStore()
        self.non_rt = NonRtRic(store, self.registry)
        for ptype, pid, body in sc.ric.policies:
            store.put(ptype, pid, body)
        self.non_rt.connect_near_rt(
            lambda event, policy: self.sim.schedule_in(
                self.a1_lat, lambda: self.ric.on_policy(event, policy)
            )
        )

    # ------------------------------------------------------------------
    # uplink path
    # ------------------------------------------------------------------

    def _schedule_device(self, dev: EndDevice, delay_ns: int) -> None:
        when = self.sim.now_ns + delay_ns
        if when > round(self.sc.duration_s * SECONDS):
            return
        self.sim.schedule_in(delay_ns, lambda: self._device_uplink(dev))

    def _device_uplink(self, dev: EndDevice) -> None:
        tx = dev.build_transmission(self.sim.now_ns)
        state = _TxState(tx=tx)
        for gid, gw in self.gateways.items():
            dist = _distance(dev.spec.position_m, gw.position_m)
            rx_power = tx.tx_power_dbm - path_loss_db(dist, self.sc.channel)
            snr = rx_power - noise_floor_dbm(tx.bw_hz, self.sc.channel.noise_figure_db)
            state.rx[gid] = (rx_power, snr)
        self.transmissions.append(state)
        self.sim.schedule_at(tx.end_ns, lambda: self._complete_uplink(state))
        self._schedule_device(dev, dev.next_uplink_delay_ns())

    def _overlapping(self, state: _TxState) -> list[_TxState]:
        tx = state.tx
        return [
            other
            for other in self.transmissions
            if other is not state
            and other.tx.channel_hz == tx.channel_hz
            and other.tx.start_ns < tx.end_ns
            and other.tx.end_ns > tx.start_ns
        ]

    def _complete_uplink(self, state: _TxState) -> None:
        tx = state.tx
        overlaps = self._overlapping(state)
        for gid, gw in self.gateways.items():
            rx_power, snr = state.rx[gid]
            if snr < self.registry.required_snr_db(tx.sf):
                state.gw_outcome[gid] = "below_sensitivity"
                continue
            if overlaps:
                entries = [CollisionEntry("self", tx.sf, rx_power)] + [
                    CollisionEntry(i, o.tx.sf, o.rx[gid][0])
                    for i, o in enumerate(overlaps)
                ]
                if not collision_resolve(entries, self.registry)["self"]:
                    state.gw_outcome[gid] = "collided"
                    continue
            event = self._radio_event(state, gid, rx_power)
            state.gw_outcome[gid] = "reached_ru"
            self._gateway_receive(gw, event, state)

    def _radio_event(self, state: _TxState, gid: str, rx_power_dbm: float) -> RadioEvent:
        tx = state.tx
        if state.base_iq is None:
            state.base_iq = phy.modulate_block(tx.symbols, tx.params).samples
        samples = state.base_iq * 10.0 ** (rx_power_dbm / 20.0)
        if self.sc.channel.awgn_enabled:
            gw_index = sorted(self.gateways).index(gid)
            rng = np.random.default_rng(
                np.random.SeedSequence(
                    entropy=[self.sc.seed, 0xA36, tx.dev_addr, tx.fcnt, gw_index]
                )
            )
            floor = noise_floor_dbm(tx.bw_hz, self.sc.channel.noise_figure_db)
            sigma = math.sqrt(10.0 ** (floor / 10.0) / 2.0)
            noise = rng.normal(0, sigma, len(samples)) + 1j * rng.normal(
                0, sigma, len(samples)
            )
            samples = samples + noise
        return RadioEvent(
            channel_hz=tx.channel_hz,
            iq=phy.IQBuffer(samples, tx.bw_hz),
            true_tx_power_dbm=tx.tx_power_dbm,
            arrival_time_ns=tx.end_ns,
            battery_pct=tx.battery_pct,
        )

    def _gateway_receive(self, gw: _Gateway, event: RadioEvent, state: _TxState) -> None:
        sections = gw.ru.receive(event)
        if not sections:
            state.gw_outcome[gw.gateway_id] = "phy_failed"
            return
        for section in sections:
            if self.modular:
                frame = encode_frame(section)
                self.capture_frames.append(frame)
                self.ul_frames += 1
                self.sim.schedule_in(
                    self.fh_lat,
                    lambda f=frame, g=gw, s=state: self._du_frame(g, f, s),
                )
            else:
                self.sim.schedule_in(
                    0, lambda sec=section, g=gw, s=state: self._du_section(g, sec, s)
                )

    def _du_frame(self, gw: _Gateway, frame: bytes, state: _TxState) -> None:
        record = gw.du.handle_fronthaul(frame)
        state.gw_outcome[gw.gateway_id] = "decoded" if record else "decode_failed"

    def _du_section(self, gw: _Gateway, section, state: _TxState) -> None:
        record = gw.du.handle_section(section)
        state.gw_outcome[gw.gateway_id] = "decoded" if record else "decode_failed"

    # ------------------------------------------------------------------
    # downlink path
    # ------------------------------------------------------------------

    def _ns_send_downlink(self, gateway_id: str, directive: DownlinkDirective) -> bool:
        gw = self.gateways.get(gateway_id)
        if gw is None:
            return False
        rx1, rx2 = gw.du.schedule_rx_windows(
            directive.uplink_end_ns,
            directive.uplink_channel_hz,
            directive.uplink_channel_index,
            directive.uplink_sf,
        )
        slots = [rx1, rx2] if directive.allow_rx2_fallback else [rx1]
        for slot in slots:
            try:
                section = gw.du.build_downlink(
                    directive.mac_bytes,
                    DownlinkParams(
                        sf=slot.sf,
                        tx_power_dbm=directive.tx_power_dbm,
                        slot_ns=slot.time_ns,
                        channel_index=slot.channel_index,
                        channel_hz=slot.channel_hz,
                    ),
                )
            except DutyCycleError:
                continue
            except DuRangeError:
                return False
            if self.modular:
                frame = encode_frame(section)
                self.capture_frames.append(frame)
                self.dl_frames += 1
                self.sim.schedule_in(
                    self.fh_lat,
                    lambda f=frame, g=gw: self._ru_transmit(g, decode_frame(f)),
                )
            else:
                self.sim.schedule_in(0, lambda sec=section, g=gw: self._ru_transmit(g, sec))
            return True
        return False

    def _ru_transmit(self, gw: _Gateway, section) -> None:
        event = gw.ru.transmit(section)
        dev = self.devices.get(section.device_address)
        window = (
            dev.listening_window(event.arrival_time_ns, event.channel_hz, section.spreading_factor)
            if dev is not None
            else None
        )
        self.dl_emissions.append(
            {
                "gateway_id": gw.gateway_id,
                "dev_addr": f"{section.device_address:08x}",
                "slot_ns": event.arrival_time_ns,
                "channel_hz": event.channel_hz,
                "sf": section.spreading_factor,
                "airtime_s": len(event.iq) / event.iq.sample_rate_hz,
                "window_ok": window is not None,
            }
        )
        if dev is None or window is None:
            return
        dist = _distance(dev.spec.position_m, gw.position_m)
        rx_power = event.true_tx_power_dbm - path_loss_db(dist, self.sc.channel)
        floor = noise_floor_dbm(section.bw_hz, self.sc.channel.noise_figure_db)
        if rx_power - floor < self.registry.required_snr_db(section.spreading_factor):
            return
        samples = event.iq.samples * 10.0 ** (-path_loss_db(dist, self.sc.channel) / 20.0)
        if self.sc.channel.awgn_enabled:
            self._dl_counter += 1
            rng = np.random.default_rng(
                np.random.SeedSequence(
                    entropy=[self.sc.seed, 0xD07, section.device_address, self._dl_counter]
                )
            )
            sigma = math.sqrt(10.0 ** (floor / 10.0) / 2.0)
            samples = samples + rng.normal(0, sigma, len(samples)) + 1j * rng.normal(
                0, sigma, len(samples)
            )
        iq = phy.IQBuffer(samples, event.iq.sample_rate_hz)
        finish = event.arrival_time_ns + round(len(iq) / iq.sample_rate_hz * SECONDS)
        self.sim.schedule_at(
            finish,
            lambda d=dev, buf=iq, sf=section.spreading_factor: self._device_downlink(d, buf, sf),
        )

    def _device_downlink(self, dev: EndDevice, iq: phy.IQBuffer, sf: int) -> None:
        if dev.handle_downlink(iq, sf):
            self.dl_delivered += 1

    # ------------------------------------------------------------------
    # execution and report
    # ------------------------------------------------------------------

    def run(self) -> RunResult:
        for spec in self.sc.downlinks:
            item = DownlinkItem(spec.dev_addr, spec.payload, spec.fport, spec.priority)
            self.sim.schedule_at(
                round(spec.at_s * SECONDS), lambda i=item: self.ns.queue_downlink(i)
            )
        for dev in self.devices.values():
            self._schedule_device(dev, dev.first_uplink_delay_ns())
        end_ns = round((self.sc.duration_s + RUN_GRACE_S) * SECONDS)
        self.sim.run_until(end_ns)
        return self._build_result(end_ns)

    def _classify(self) -> dict[str, int]:
        accepted = {(m.dev_addr, m.fcnt32) for m in self.ns.merged_log}
        counts = {"delivered": 0, "collided": 0, "below_sensitivity": 0, "crc_failed": 0}
        for state in self.transmissions:
            key = (state.tx.dev_addr, state.tx.fcnt)
            outcomes = set(state.gw_outcome.values())
            if key in accepted:
                cls = "delivered"
            elif "collided" in outcomes:
                cls = "collided"
            elif outcomes == {"below_sensitivity"}:
                cls = "below_sensitivity"
            else:
                cls = "crc_failed"
            state.classification = cls
            counts[cls] += 1
        counts["transmitted"] = len(self.transmissions)
        return counts

    def _audit_duty(self) -> dict:
        violations = []
        per_gw_band: dict[tuple[str, str], list[tuple[int, float]]] = {}
        for emission in self.dl_emissions:
            band = self.registry.sub_band_of(emission["channel_hz"])
            per_gw_band.setdefault((emission["gateway_id"], band), []).append(
                (emission["slot_ns"], emission["airtime_s"])
            )
        for (gid, band), events in per_gw_band.items():
            limit = None
            for gw in self.gateways.values():
                if gw.gateway_id == gid:
                    limit = gw.du.cfg.duty_cycle_limit * 3600.0
            events.sort()
            for i, (slot, _) in enumerate(events):
                used = sum(
                    a for t, a in events[: i + 1] if t > slot - 3600 * SECONDS
                )
                if used > limit + 1e-9:
                    violations.append(
                        f"{gid}/{band}: {used:.3f} s in the hour ending at {slot}"
                    )
        return {"ok": not violations, "violations": violations}

    def _audit_windows(self) -> dict:
        bad = [e for e in self.dl_emissions if not e["window_ok"]]
        return {
            "ok": not bad,
            "violations": [
                f"{e['gateway_id']} -> {e['dev_addr']} at {e['slot_ns']}" for e in bad
            ],
        }

    def _audit_near_rt(self) -> dict:
        if self.ric is None:
            return {"ok": True, "violations": [], "checked": 0}
        lo, hi = self.registry.near_rt_band_s
        violations = []
        checked = 0
        for record in self.ric.completed_controls():
            if record.caused_by_ns <= 0 or record.result != "ack":
                continue
            checked += 1
            elapsed = (record.applied_ns - record.caused_by_ns) / SECONDS
            if not lo <= elapsed <= hi:
                violations.append(
                    f"txid {record.transaction_id}: {elapsed * 1e3:.1f} ms outside band"
                )
        return {"ok": not violations, "violations": violations, "checked": checked}

    def _audit_conservation(self, counts: dict) -> dict:
        total = (
            counts["delivered"]
            + counts["collided"]
            + counts["below_sensitivity"]
            + counts["crc_failed"]
        )
        ok = total == counts["transmitted"]
        return {
            "ok": ok,
            "violations": []
            if ok
            else [f"partition sums to {total}, transmitted {counts['transmitted']}"],
        }

    def _build_result(self, end_ns: int) -> RunResult:
        counts = self._classify()
        per_device = {}
        delivered_by_dev: dict[int, int] = {}
        for state in self.transmissions:
            if state.classification == "delivered":
                delivered_by_dev[state.tx.dev_addr] = (
                    delivered_by_dev.get(state.tx.dev_addr, 0) + 1
                )
        for addr, dev in sorted(self.devices.items()):
            sent = dev.uplinks_sent
            got = delivered_by_dev.get(addr, 0)
            per_device[f"{addr:08x}"] = {
                "transmitted": sent,
                "delivered": got,
                "pdr": got / sent if sent else 0.0,
                "initial_sf": dev.spec.sf,
                "final_sf": dev.sf,
                "final_power_dbm": dev.tx_power_dbm,
                "energy_mas": round(dev.energy_mas, 9),
                "battery_pct": round(dev.battery_pct, 6),
                "downlinks_received": dev.downlinks_received,
                "commands_applied": dev.commands_applied,
            }
        per_gateway = {}
        for gid, gw in sorted(self.gateways.items()):
            per_gateway[gid] = {
                "ul_detections": gw.ru.totals["detections"],
                "missed_detections": gw.ru.totals["missed_detections"],
                "dl_transmissions": gw.ru.totals["transmissions"],
                "du": {k: v for k, v in sorted(gw.du.kpi_snapshot().metrics.items())},
            }

        audits = {
            "conservation": self._audit_conservation(counts),
            "duty_cycle": self._audit_duty(),
            "class_a_windows": self._audit_windows(),
            "near_rt_band": self._audit_near_rt(),
        }
        audits["all_ok"] = all(a["ok"] for a in audits.values() if isinstance(a, dict))

        delivered_multiset = sorted(
            f"{r['dev_addr']}:{r['fcnt']}:{r['payload_hex']}" for r in self.as_records
        )
        ric_section = None
        if self.ric is not None:
            ric_section = {
                "commands": [
                    {
                        "transaction_id": r.transaction_id,
                        "xapp_id": r.xapp_id,
                        "target": r.command.target_node,
                        "path": r.command.parameter_path,
                        "value": r.command.value,
                        "issued_ns": r.issued_ns,
                        "applied_ns": r.applied_ns,
                        "caused_by_ns": r.caused_by_ns,
                        "result": r.result,
                        "reason": r.reason,
                    }
                    for r in self.ric.control_log
                ],
                "kpi_records": len(self.ric.kpi_archive),
                "timeout_fails": self.ric.timeout_fails,
            }

        report = {
            "scenario": self.sc.name,
            "mode": self.sc.mode,
            "seed": self.sc.seed,
            "duration_s": self.sc.duration_s,
            "devices": per_device,
            "gateways": per_gateway,
            "ns": {k: v for k, v in sorted(self.ns.kpi_snapshot().metrics.items())},
            "conservation": counts,
            "downlink": {
                "dispatched": self.ns.kpis["downlinks_dispatched"],
                "deferred": self.ns.kpis["downlinks_deferred"],
                "emissions": len(self.dl_emissions),
                "delivered_to_device": self.dl_delivered,
            },
            "fronthaul": {
                "ul_frames": self.ul_frames,
                "dl_frames": self.dl_frames,
                "captured": len(self.capture_frames),
            },
            "ric": ric_section,
            "smo": {
                "kpis": self.smo.o1_collect_kpis(0, end_ns),
                "fault_count": len(self.smo.fault_log),
            },
            "audits": audits,
            "delivered_multiset": delivered_multiset,
        }
        return RunResult(
            report=report,
            capture_frames=self.capture_frames,
            kpi_archive=list(self.ric.kpi_archive) if self.ric else [],
            as_records=self.as_records,
            fault_log=[e.to_dict() for e in self.smo.fault_log],
        )


def run_scenario(sc: Scenario) -> RunResult:
    """Execute one scenario deterministically; see RunResult.report."""
    return _Run(sc).run()
