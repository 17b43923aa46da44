"""End devices: periodic class-A uplinks, RX windows, MAC command execution."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .. import mac, phy
from ..constants import ConstantsRegistry
from .channel import airtime
from .scenario import DeviceSpec

__all__ = ["Transmission", "RxWindow", "EndDevice"]

SECONDS = 1_000_000_000
JITTER_FRACTION = 0.05


@dataclass
class Transmission:
    dev_addr: int
    fcnt: int
    start_ns: int
    end_ns: int
    channel_hz: int
    sf: int
    bw_hz: int
    tx_power_dbm: int
    symbols: list[int]
    params: phy.PhyParams
    airtime_s: float
    battery_pct: float
    payload_len: int


@dataclass
class RxWindow:
    open_ns: int
    channel_hz: int
    sf: int


class EndDevice:
    """Class-A device: transmit, open RX1/RX2, apply LinkADR commands."""

    def __init__(self, spec: DeviceSpec, registry: ConstantsRegistry, seed: int):
        nwk, app = spec.keys()
        self.spec = spec
        self.registry = registry
        self.session = mac.DeviceSession(
            spec.dev_addr, nwk, app, device_class=spec.device_class
        )
        self.sf = spec.sf
        self.tx_power_dbm = spec.tx_power_dbm
        self.battery_mas = spec.battery_mah * 3600.0
        self.initial_battery_mas = self.battery_mas
        self._rng = np.random.default_rng(
            np.random.SeedSequence(entropy=[seed, 0x0DE7, spec.dev_addr])
        )
        self.windows: list[RxWindow] = []
        self.uplinks_sent = 0
        self.downlinks_received = 0
        self.commands_applied = 0
        self.energy_mas = 0.0
        self.last_app_payload: bytes = b""

    # -- traffic -------------------------------------------------------------

    def first_uplink_delay_ns(self) -> int:
        # stagger the first uplink uniformly over one period
        return round(float(self._rng.uniform(0.05, 1.0)) * self.spec.period_s * SECONDS)

    def next_uplink_delay_ns(self) -> int:
        jitter = float(self._rng.uniform(-JITTER_FRACTION, JITTER_FRACTION))
        return round(self.spec.period_s * (1.0 + jitter) * SECONDS)

    @property
    def battery_pct(self) -> float:
        return max(0.0, 100.0 * self.battery_mas / self.initial_battery_mas)

    def _app_payload(self, fcnt: int) -> bytes:
        text = f"{self.spec.dev_addr:08x}:{fcnt:08d}"
        raw = text.encode("ascii")
        if len(raw) < self.spec.payload_len:
            raw += bytes(self.spec.payload_len - len(raw))
        return raw[: self.spec.payload_len]

    def build_transmission(self, now_ns: int) -> Transmission:
        """One uplink: MAC frame, PHY chain, battery charge, RX windows."""
        fcnt = self.session.fcnt_up
        payload = self._app_payload(fcnt)
        frame = mac.build_uplink(
            self.session, self.spec.fport, payload, sf=self.sf, adr=self.spec.adr
        )
        params = phy.PhyParams(sf=self.sf, bw_hz=125000)
        symbols = phy.phy_assemble(frame, params)
        duration = airtime(params, len(frame))
        plan = self.registry.uplink_channels_hz
        channel = plan[fcnt % len(plan)]
        end_ns = now_ns + round(duration * SECONDS)

        charge = duration * self.registry.tx_current_ma(self.tx_power_dbm)
        self.battery_mas = max(0.0, self.battery_mas - charge)
        self.energy_mas += charge
        self.uplinks_sent += 1

        self.windows = [
            RxWindow(
                end_ns + round(self.registry.rx1_delay_s * SECONDS), channel, self.sf
            ),
            RxWindow(
                end_ns + round(self.registry.rx2_delay_s * SECONDS),
                self.registry.rx2_channel_hz,
                self.registry.rx2_sf,
            ),
        ]
        return Transmission(
            dev_addr=self.spec.dev_addr,
            fcnt=fcnt,
            start_ns=now_ns,
            end_ns=end_ns,
            channel_hz=channel,
            sf=self.sf,
            bw_hz=125000,
            tx_power_dbm=self.tx_power_dbm,
            symbols=symbols,
            params=params,
            airtime_s=duration,
            battery_pct=self.battery_pct,
            payload_len=len(frame),
        )

    # -- reception ------------------------------------------------------------

    def listening_window(self, start_ns: int, channel_hz: int, sf: int,
                         tolerance_ns: int = 1000) -> Optional[RxWindow]:
        """The open class-A window matching a downlink start, if any."""
        for window in self.windows:
            if (
                abs(window.open_ns - start_ns) <= tolerance_ns
                and window.channel_hz == channel_hz
                and window.sf == sf
            ):
                return window
        return None

    def handle_downlink(self, iq: phy.IQBuffer, sf: int) -> bool:
        """Demodulate, verify, and execute a downlink landing in a window."""
        params = phy.PhyParams(sf=sf, bw_hz=125000)
        detection = phy.preamble_detect(iq, params)
        if not detection.found:
            return False
        usable = phy.IQBuffer(iq.samples[detection.offset :], iq.sample_rate_hz)
        symbols = [
            s
            for s, _ in phy.demodulate_stream(
                usable, params, detection.cfo_bins % params.n_chips
            )
        ]
        try:
            recovered = phy.phy_recover(symbols, params)
        except (phy.PhyIntegrityError, phy.PhyShapeError):
            return False
        if recovered.crc_present and not recovered.crc_ok:
            return False
        try:
            verdict = mac.parse_and_verify(recovered.payload, self.session)
        except mac.MacParseError:
            return False
        if not verdict.mic_ok or not verdict.fcnt_ok:
            return False
        if verdict.frame.dev_addr != self.spec.dev_addr:
            return False
        self.session.fcnt_down = verdict.fcnt32 + 1
        self.downlinks_received += 1
        if verdict.frame.fport is not None:
            self.last_app_payload = mac.decrypt_payload(
                self.session,
                mac.DOWNLINK,
                verdict.fcnt32,
                verdict.frame.frm_payload,
                verdict.frame.fport,
            )
        for command in mac.parse_mac_commands(verdict.frame.fopts):
            self.apply_link_adr(command)
        return True

    def apply_link_adr(self, command: mac.LinkAdrCommand) -> None:
        if command.sf in self.registry.spreading_factors:
            self.sf = command.sf
        lo, hi = self.registry.tx_power_min_dbm, self.registry.tx_power_max_dbm
        if lo <= command.tx_power_dbm <= hi:
            self.tx_power_dbm = command.tx_power_dbm
        self.commands_applied += 1
