"""O-LoRaWAN radio unit: capture, ADC/DAC, chirp processing, reporting.

The RU converts radio events into uplink LoRaWAN sections (symbol
detection by default, raw IQ passthrough optionally) and downlink
sections back into radio emissions. It never touches codewords or MAC
bytes; everything from Gray decode upward lives in the DU.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from . import phy
from .constants import ConstantsRegistry, load_constants
from .e2 import KpiRecord
from .fronthaul import (
    BW_CODE_FROM_HZ,
    DL,
    UL,
    LoRaWANSection,
    quantize_peak_metric,
    quantize_rssi_dbm,
    quantize_snr_db,
    validate_section,
)

__all__ = [
    "RuConfig",
    "RadioEvent",
    "RadioUnit",
    "RuStateError",
    "RuSchedulingError",
    "RuConfigError",
    "adc_quantize",
    "pack_dl_symbols",
    "unpack_dl_symbols",
]


class RuStateError(RuntimeError):
    pass


class RuSchedulingError(ValueError):
    pass


class RuConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RuConfig:
    channels_hz: tuple[int, ...]
    listening_sfs: tuple[int, ...] = (7, 8, 9, 10, 11, 12)
    bw_hz: int = 125000
    noise_figure_db: float = 6.0
    tx_enabled: bool = True
    reporting_period_s: float = 30.0
    iq_passthrough: bool = False
    adc_enabled: bool = True

    def __post_init__(self):
        if not self.channels_hz:
            raise RuConfigError("at least one channel is required")
        if self.reporting_period_s <= 0:
            raise RuConfigError("reporting_period_s must be positive")
        if self.bw_hz not in BW_CODE_FROM_HZ:
            raise RuConfigError(f"bandwidth {self.bw_hz} Hz not in 125/250/500 kHz")


@dataclass
class RadioEvent:
    """One transmission as seen at an antenna, at one sample per chip."""

    channel_hz: int
    iq: phy.IQBuffer
    true_tx_power_dbm: float
    arrival_time_ns: int
    battery_pct: Optional[float] = None

    def __post_init__(self):
        if len(self.iq) == 0:
            raise ValueError("a radio event needs a non-empty IQ buffer")


def adc_quantize(samples: np.ndarray, bits: int) -> np.ndarray:
    """Uniform mid-tread quantizer over +/-1.0 full scale, per I/Q rail."""
    levels = 1 << (bits - 1)
    scale = float(levels)
    i = np.clip(np.round(samples.real * scale), -levels, levels - 1) / scale
    q = np.clip(np.round(samples.imag * scale), -levels, levels - 1) / scale
    return i + 1j * q


def pack_dl_symbols(symbols) -> bytes:
    """DL payload content: the coded symbol block, 16 bits per symbol."""
    return struct.pack(f">{len(symbols)}H", *symbols)


def unpack_dl_symbols(payload: bytes) -> list[int]:
    if len(payload) % 2:
        raise ValueError("DL symbol payload length must be even")
    return list(struct.unpack(f">{len(payload) // 2}H", payload))


class RadioUnit:
    """Single-threaded RU state machine driven by the event loop."""

    def __init__(
        self,
        ru_id: str,
        cfg: RuConfig,
        clock: Callable[[], int],
        registry: ConstantsRegistry | None = None,
        emit: Optional[Callable[["RadioEvent"], None]] = None,
    ):
        self.ru_id = ru_id
        self.cfg = cfg
        self.clock = clock
        self.registry = registry or load_constants()
        self.emit = emit  # sink for scheduled transmissions (set by the wiring)
        self._last_timestamp_ns = 0
        self.totals = {"detections": 0, "missed_detections": 0, "transmissions": 0}
        self._window: dict[str, float | int] = {}
        self.reset_window()

    # -- configuration -----------------------------------------------------

    def apply_config(self, delta: dict) -> RuConfig:
        """Merge a partial config; takes effect from the next event."""
        known = set(RuConfig.__dataclass_fields__)
        unknown = set(delta) - known
        if unknown:
            raise RuConfigError(f"unknown RU config keys: {sorted(unknown)}")
        merged = {k: tuple(v) if isinstance(v, list) else v for k, v in delta.items()}
        self.cfg = replace(self.cfg, **merged)
        return self.cfg

    def o1_apply(self, params: dict) -> dict:
        rename = {"channels_hz": "channels_hz"}
        delta = {rename.get(k, k): v for k, v in params.items()}
        self.apply_config(delta)
        return self.o1_read()

    def o1_read(self) -> dict:
        return {
            "channels_hz": list(self.cfg.channels_hz),
            "listening_sfs": list(self.cfg.listening_sfs),
            "noise_figure_db": self.cfg.noise_figure_db,
            "tx_enabled": self.cfg.tx_enabled,
            "reporting_period_s": self.cfg.reporting_period_s,
            "iq_passthrough": self.cfg.iq_passthrough,
        }

    # -- uplink --------------------------------------------------------------

    def noise_floor_dbm(self) -> float:
        return (
            self.registry.thermal_noise_dbm_hz
            + 10.0 * math.log10(self.cfg.bw_hz)
            + self.cfg.noise_figure_db
        )

    def receive(self, ev: RadioEvent) -> list[LoRaWANSection]:
        """Process one captured transmission into UL sections.

        Off-channel events are ignored; an on-channel event yields exactly
        one section or one missed-detection count, never both.
        """
        if ev.channel_hz not in self.cfg.channels_hz:
            return []
        samples = ev.iq.samples
        if self.cfg.adc_enabled:
            # normalize into the ADC range, quantize, restore scale
            peak = float(np.max(np.abs(np.concatenate([samples.real, samples.imag]))))
            if peak > 0:
                scale = peak
                samples = adc_quantize(samples / scale, self.registry.adc_bits) * scale
        buf = phy.IQBuffer(samples, ev.iq.sample_rate_hz)

        detection = None
        params = None
        for sf in self.cfg.listening_sfs:
            p = phy.PhyParams(sf=sf, bw_hz=self.cfg.bw_hz)
            det = phy.preamble_detect(buf, p)
            if det.found:
                detection, params = det, p
                break
        if detection is None:
            self._window["missed_detections"] += 1
            self.totals["missed_detections"] += 1
            return []

        bin_correction = detection.cfo_bins % params.n_chips
        usable = phy.IQBuffer(buf.samples[detection.offset :], buf.sample_rate_hz)
        demod = phy.demodulate_stream(usable, params, bin_correction)
        rssi, snr = phy.estimate_link_metrics(buf, self.noise_floor_dbm())

        timestamp = max(ev.arrival_time_ns, self._last_timestamp_ns)
        self._last_timestamp_ns = timestamp
        section = LoRaWANSection(
            direction=UL,
            spreading_factor=params.sf,
            bandwidth_code=BW_CODE_FROM_HZ[self.cfg.bw_hz],
            demodulation_info=tuple((s, quantize_peak_metric(m)) for s, m in demod),
            uplink_snr_db=quantize_snr_db(snr),
            uplink_rssi_dbm=quantize_rssi_dbm(rssi),
            timestamp_reception=timestamp,
            timing_advance=min(detection.offset // 16, 255),
            preamble_length=params.preamble_len,
            channel_index=self.cfg.channels_hz.index(ev.channel_hz),
            battery_status=None
            if ev.battery_pct is None
            else max(0, min(255, round(ev.battery_pct))),
        )
        if self.cfg.iq_passthrough:
            section.i_samples = tuple(float(v) for v in buf.samples.real)
            section.q_samples = tuple(float(v) for v in buf.samples.imag)

        self._window["detections"] += 1
        self.totals["detections"] += 1
        self._window["snr_sum"] += snr
        self._window["rssi_sum"] += rssi
        return [section]

    # -- downlink ---------------------------------------------------------------

    def transmit(self, section: LoRaWANSection) -> RadioEvent:
        """Turn a DL section into a radio emission at its transmission slot."""
        violations = validate_section(section)
        if violations or section.direction != DL:
            raise RuStateError(f"invalid DL section: {violations or 'not a DL section'}")
        if not self.cfg.tx_enabled:
            raise RuStateError("transmit path is disabled")
        now = self.clock()
        if section.transmission_slot < now:
            raise RuSchedulingError(
                f"transmission slot {section.transmission_slot} is in the past (now {now})"
            )
        p = phy.PhyParams(
            sf=section.spreading_factor,
            bw_hz=section.bw_hz,
            preamble_len=section.preamble_length or self.registry.default_preamble_len,
        )
        symbols = unpack_dl_symbols(section.dl_payload)
        iq = phy.modulate_block([0] * p.preamble_len + symbols, p)
        amplitude = 10.0 ** (section.tx_power_dbm / 20.0)
        iq = phy.IQBuffer(iq.samples * amplitude, iq.sample_rate_hz)
        channel = (
            self.cfg.channels_hz[section.channel_index]
            if section.channel_index is not None
            and section.channel_index < len(self.cfg.channels_hz)
            else self.registry.rx2_channel_hz
        )
        event = RadioEvent(
            channel_hz=channel,
            iq=iq,
            true_tx_power_dbm=section.tx_power_dbm,
            arrival_time_ns=section.transmission_slot,
        )
        self._window["transmissions"] += 1
        self.totals["transmissions"] += 1
        if self.emit is not None:
            self.emit(event)
        return event

    # -- reporting ------------------------------------------------------------

    def reset_window(self) -> None:
        self._window = {
            "detections": 0,
            "missed_detections": 0,
            "transmissions": 0,
            "snr_sum": 0.0,
            "rssi_sum": 0.0,
        }

    def report(self) -> KpiRecord:
        """KPI record over the current window; resets the window."""
        w = self._window
        n = w["detections"]
        record = KpiRecord(
            node_id=self.ru_id,
            timestamp_ns=self.clock(),
            metrics={
                "detections": float(n),
                "missed_detections": float(w["missed_detections"]),
                "transmissions": float(w["transmissions"]),
                "mean_snr_db": w["snr_sum"] / n if n else 0.0,
                "mean_rssi_dbm": w["rssi_sum"] / n if n else 0.0,
            },
        )
        self.reset_window()
        return record
