"""Frozen constants registry and shared document schemas.

All cross-module numeric constants (ADR tables, current draw, capture
thresholds, channel plan, timings) live in ``data/constants.json`` with a
source tag per entry, and every consumer reads them through one immutable
:class:`ConstantsRegistry` instance so no constant ever exists in two places.
"""

from __future__ import annotations

import json
from functools import lru_cache
from importlib import resources
from typing import Any

import jsonschema

__all__ = [
    "ConstantsError",
    "ConstantsRegistry",
    "load_constants",
    "validate_schemas",
    "schema_ids",
]

SF_MIN, SF_MAX = 7, 12

_SCHEMA_FILES = {
    "a1/SF_BOUNDS": "a1_sf_bounds.json",
    "a1/ENERGY_SAVING": "a1_energy_saving.json",
    "a1/PRIORITIZATION": "a1_prioritization.json",
    "o1/du": "o1_du.json",
    "o1/ru": "o1_ru.json",
    "o1/ns": "o1_ns.json",
    "netsim/scenario": "scenario.json",
}


class ConstantsError(RuntimeError):
    """Malformed constants file or unknown schema id."""


def _freeze(value: Any) -> Any:
    if isinstance(value, dict):
        return {k: _freeze(v) for k, v in value.items()}
    if isinstance(value, list):
        return tuple(_freeze(v) for v in value)
    return value


class ConstantsRegistry:
    """Immutable view over the constants file with typed accessors."""

    def __init__(self, raw: dict):
        self._values: dict[str, Any] = {}
        self._sources: dict[str, str] = {}
        for group, entries in raw.items():
            if group.startswith("_"):
                continue
            if not isinstance(entries, dict):
                raise ConstantsError(f"group {group!r} is not a table")
            for name, entry in entries.items():
                if (
                    not isinstance(entry, dict)
                    or set(entry) != {"value", "source"}
                    or entry["source"] not in ("paper", "decision")
                ):
                    raise ConstantsError(
                        f"constant {group}.{name} must be "
                        "{'value': ..., 'source': 'paper'|'decision'}"
                    )
                path = f"{group}.{name}"
                self._values[path] = _freeze(entry["value"])
                self._sources[path] = entry["source"]
        self._check_sf_tables()

    def _check_sf_tables(self) -> None:
        full = {str(sf) for sf in range(SF_MIN, SF_MAX + 1)}
        for path in ("adr.required_snr_db", "mac.max_app_payload_per_sf"):
            if set(self._values[path]) != full:
                raise ConstantsError(f"{path} must cover sf {SF_MIN}..{SF_MAX} exactly")
        cross = self._values["radio.cross_sf_rejection_db"]
        if set(cross) != full:
            raise ConstantsError("cross_sf_rejection_db must cover sf 7..12")
        for sf, row in cross.items():
            if set(row) != full - {sf}:
                raise ConstantsError(f"cross_sf_rejection_db[{sf}] must cover the other 5 sfs")

    def get(self, path: str) -> Any:
        try:
            return self._values[path]
        except KeyError:
            raise ConstantsError(f"unknown constant {path!r}") from None

    def source_of(self, path: str) -> str:
        try:
            return self._sources[path]
        except KeyError:
            raise ConstantsError(f"unknown constant {path!r}") from None

    def paths(self) -> tuple[str, ...]:
        return tuple(self._values)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, ConstantsRegistry) and other._values == self._values

    def __hash__(self) -> int:  # identity hash; instances are interned by load_constants
        return id(self)

    # -- phy ------------------------------------------------------------
    @property
    def spreading_factors(self) -> tuple[int, ...]:
        return self.get("phy.spreading_factors")

    @property
    def bandwidths_hz(self) -> tuple[int, ...]:
        return self.get("phy.bandwidths_hz")

    @property
    def coding_rates(self) -> tuple[int, ...]:
        return self.get("phy.coding_rates")

    @property
    def default_preamble_len(self) -> int:
        return self.get("phy.default_preamble_len")

    @property
    def ldro_symbol_time_threshold_s(self) -> float:
        return self.get("phy.ldro_symbol_time_threshold_s")

    @property
    def pn9_seed(self) -> int:
        return self.get("phy.pn9_seed")

    @property
    def adc_bits(self) -> int:
        return self.get("phy.adc_bits")

    # -- fronthaul -------------------------------------------------------
    @property
    def lorawan_section_type(self) -> int:
        return self.get("fronthaul.lorawan_section_type")

    @property
    def ecpri_protocol_revision(self) -> int:
        return self.get("fronthaul.ecpri_protocol_revision")

    @property
    def lorawan_version_code(self) -> int:
        return self.get("fronthaul.lorawan_version_code")

    @property
    def capture_file_magic(self) -> bytes:
        return self.get("fronthaul.capture_file_magic").encode("ascii")

    # -- mac / adr ---------------------------------------------------------
    def max_app_payload(self, sf: int) -> int:
        return self.get("mac.max_app_payload_per_sf")[str(sf)]

    @property
    def fcnt_replay_window(self) -> int:
        return self.get("mac.fcnt_replay_window")

    def required_snr_db(self, sf: int) -> float:
        return self.get("adr.required_snr_db")[str(sf)]

    @property
    def adr_margin_db(self) -> float:
        return self.get("adr.margin_db")

    @property
    def adr_snr_step_db(self) -> float:
        return self.get("adr.snr_step_db")

    @property
    def adr_power_step_dbm(self) -> int:
        return self.get("adr.power_step_dbm")

    @property
    def adr_history_len(self) -> int:
        return self.get("adr.history_len")

    # -- radio -------------------------------------------------------------
    @property
    def tx_power_min_dbm(self) -> int:
        return self.get("radio.tx_power_min_dbm")

    @property
    def tx_power_max_dbm(self) -> int:
        return self.get("radio.tx_power_max_dbm")

    @property
    def capture_threshold_db(self) -> float:
        return self.get("radio.capture_threshold_db")

    def cross_sf_rejection_db(self, desired_sf: int, interferer_sf: int) -> float:
        """Max interferer power advantage (dB) a desired signal tolerates."""
        if desired_sf == interferer_sf:
            raise ConstantsError("same-sf overlap is governed by the capture threshold")
        return self.get("radio.cross_sf_rejection_db")[str(desired_sf)][str(interferer_sf)]

    def tx_current_ma(self, power_dbm: int) -> float:
        table = self.get("radio.tx_current_ma")
        key = str(power_dbm)
        if key in table:
            return float(table[key])
        lo = (power_dbm // 2) * 2  # table is keyed on even dBm steps
        hi = lo + 2
        if str(lo) not in table or str(hi) not in table:
            raise ConstantsError(f"tx power {power_dbm} dBm outside current table")
        frac = (power_dbm - lo) / 2.0
        return table[str(lo)] + frac * (table[str(hi)] - table[str(lo)])

    # -- channel plan --------------------------------------------------------
    @property
    def uplink_channels_hz(self) -> tuple[int, ...]:
        return self.get("channel_plan.uplink_channels_hz")

    @property
    def rx2_channel_hz(self) -> int:
        return self.get("channel_plan.rx2_channel_hz")

    @property
    def rx2_sf(self) -> int:
        return self.get("channel_plan.rx2_sf")

    def sub_band_of(self, channel_hz: int) -> str:
        for name, band in self.get("channel_plan.sub_bands").items():
            if band["low_hz"] <= channel_hz <= band["high_hz"]:
                return name
        raise ConstantsError(f"channel {channel_hz} Hz outside the channel plan sub-bands")

    def sub_band_duty_limit(self, name: str) -> float:
        return self.get("channel_plan.sub_bands")[name]["duty_cycle_limit"]

    # -- timing ----------------------------------------------------------------
    @property
    def rx1_delay_s(self) -> float:
        return self.get("timing.rx1_delay_s")

    @property
    def rx2_delay_s(self) -> float:
        return self.get("timing.rx2_delay_s")

    @property
    def dedup_window_ms(self) -> float:
        return self.get("timing.dedup_window_ms")

    @property
    def near_rt_band_s(self) -> tuple[float, float]:
        return (self.get("timing.near_rt_min_s"), self.get("timing.near_rt_max_s"))

    @property
    def e2_latency_s(self) -> float:
        return self.get("timing.e2_latency_s")

    @property
    def fronthaul_latency_s(self) -> float:
        return self.get("timing.fronthaul_latency_s")

    @property
    def backhaul_latency_s(self) -> float:
        return self.get("timing.backhaul_latency_s")

    @property
    def a1_push_latency_s(self) -> float:
        return self.get("timing.a1_push_latency_s")

    @property
    def control_period_s(self) -> float:
        return self.get("timing.control_period_s")

    # -- netsim / ric / du -------------------------------------------------------
    @property
    def netsim_defaults(self) -> dict:
        return {
            "path_loss_exponent": self.get("netsim.path_loss_exponent"),
            "reference_loss_db": self.get("netsim.reference_loss_db"),
            "reference_distance_m": self.get("netsim.reference_distance_m"),
            "noise_figure_db": self.get("netsim.noise_figure_db"),
        }

    @property
    def thermal_noise_dbm_hz(self) -> float:
        return self.get("netsim.thermal_noise_dbm_hz")

    @property
    def steering_hysteresis_db(self) -> float:
        return self.get("ric.steering_hysteresis_db")

    @property
    def steering_window(self) -> int:
        return self.get("ric.steering_window")

    @property
    def sf_xapp_uplinks_per_command(self) -> int:
        return self.get("ric.sf_xapp_uplinks_per_command")

    @property
    def energy_forecast_min_history(self) -> int:
        return self.get("ric.energy_forecast_min_history")

    @property
    def energy_lifetime_threshold_s(self) -> float:
        return self.get("ric.energy_lifetime_threshold_s")

    @property
    def ns_retry_queue_limit(self) -> int:
        return self.get("du.ns_retry_queue_limit")


@lru_cache(maxsize=None)
def load_constants() -> ConstantsRegistry:
    """Load the checked-in constants file into an interned, immutable registry."""
    text = resources.files("olorawan").joinpath("data/constants.json").read_text()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConstantsError(f"constants file is not valid JSON: {exc}") from exc
    return ConstantsRegistry(raw)


def schema_ids() -> tuple[str, ...]:
    return tuple(_SCHEMA_FILES)


@lru_cache(maxsize=None)
def _schema(schema_id: str) -> jsonschema.Draft202012Validator:
    try:
        fname = _SCHEMA_FILES[schema_id]
    except KeyError:
        raise ConstantsError(f"unknown schema id {schema_id!r}") from None
    doc = json.loads(resources.files("olorawan").joinpath(f"data/schemas/{fname}").read_text())
    return jsonschema.Draft202012Validator(doc)


def validate_schemas(doc: Any, schema_id: str) -> list[str]:
    """Validate ``doc`` against a registered schema; violations as 'path: message'."""
    validator = _schema(schema_id)
    out = []
    for err in sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path)):
        where = "/".join(str(p) for p in err.absolute_path) or "(root)"
        out.append(f"{where}: {err.message}")
    return out
