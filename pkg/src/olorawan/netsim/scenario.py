"""Scenario files: the structured-text description of one simulation run."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from ..constants import load_constants, validate_schemas
from .channel import ChannelParams

__all__ = [
    "ScenarioError",
    "DeviceSpec",
    "GatewaySpec",
    "RicSpec",
    "DownlinkSpec",
    "Scenario",
    "load_scenario",
    "derive_session_keys",
]

LEGACY = "legacy"
MODULAR = "modular"


class ScenarioError(ValueError):
    """Scenario file fails schema or semantic validation."""


def derive_session_keys(dev_addr: int) -> tuple[bytes, bytes]:
    """Deterministic ABP keys for scenario devices without explicit keys."""
    nwk = hashlib.sha256(f"olrw-nwk-{dev_addr:08x}".encode()).digest()[:16]
    app = hashlib.sha256(f"olrw-app-{dev_addr:08x}".encode()).digest()[:16]
    return nwk, app


@dataclass(frozen=True)
class DeviceSpec:
    dev_addr: int
    position_m: tuple[float, float]
    period_s: float
    sf: int
    tx_power_dbm: int = 14
    device_class: str = "A"
    fport: int = 1
    payload_len: int = 12
    adr: bool = True
    battery_mah: float = 1000.0
    nwk_skey: bytes = b""
    app_skey: bytes = b""

    def keys(self) -> tuple[bytes, bytes]:
        if self.nwk_skey and self.app_skey:
            return self.nwk_skey, self.app_skey
        return derive_session_keys(self.dev_addr)


@dataclass(frozen=True)
class GatewaySpec:
    gateway_id: str
    position_m: tuple[float, float]
    ru_params: dict = field(default_factory=dict)
    du_params: dict = field(default_factory=dict)


@dataclass(frozen=True)
class RicSpec:
    enabled: bool = False
    adr_driver: str = "ns"  # none | ns | xapp
    xapps: tuple[str, ...] = ()
    policies: tuple[tuple[str, str, dict], ...] = ()  # (type, id, body)


@dataclass(frozen=True)
class DownlinkSpec:
    at_s: float
    dev_addr: int
    payload: bytes
    fport: int = 1
    priority: int = 0


@dataclass(frozen=True)
class Scenario:
    seed: int
    duration_s: float
    devices: tuple[DeviceSpec, ...]
    gateways: tuple[GatewaySpec, ...]
    name: str = "scenario"
    mode: str = MODULAR
    channel: ChannelParams = ChannelParams()
    ric: RicSpec = RicSpec()
    downlinks: tuple[DownlinkSpec, ...] = ()

    def with_mode(self, mode: str) -> "Scenario":
        from dataclasses import replace

        return replace(self, mode=mode)

    def with_seed(self, seed: int) -> "Scenario":
        from dataclasses import replace

        return replace(self, seed=seed)


def _semantic_checks(doc: dict) -> list[str]:
    problems = []
    addrs = [d["dev_addr"].lower() for d in doc["devices"]]
    if len(set(addrs)) != len(addrs):
        problems.append("devices: dev_addr values must be unique")
    gw_ids = [g["gateway_id"] for g in doc["gateways"]]
    if len(set(gw_ids)) != len(gw_ids):
        problems.append("gateways: gateway_id values must be unique")
    for g in doc["gateways"]:
        for kind in ("ru", "du"):
            params = g.get(kind)
            if params:
                for v in validate_schemas(params, f"o1/{kind}"):
                    problems.append(f"gateway {g['gateway_id']} {kind}: {v}")
    for dl in doc.get("downlinks", ()):
        if dl["dev_addr"].lower() not in addrs:
            problems.append(f"downlinks: {dl['dev_addr']} is not a scenario device")
    for pol in doc.get("ric", {}).get("policies", ()):
        from ..a1 import validate_policy_body

        for v in validate_policy_body(pol["policy_type"], pol["body"]):
            problems.append(f"policy {pol['policy_id']}: {v}")
    return problems


def load_scenario(source) -> Scenario:
    """Load from a path, JSON text, or dict; schema + semantic validation."""
    if isinstance(source, (str, Path)) and Path(source).exists():
        doc = json.loads(Path(source).read_text())
    elif isinstance(source, str):
        doc = json.loads(source)
    elif isinstance(source, dict):
        doc = source
    else:
        raise ScenarioError(f"cannot read a scenario from {source!r}")

    violations = validate_schemas(doc, "netsim/scenario")
    violations += _semantic_checks(doc) if not violations else []
    if violations:
        raise ScenarioError("; ".join(violations))

    registry = load_constants()
    devices = tuple(
        DeviceSpec(
            dev_addr=int(d["dev_addr"], 16),
            position_m=tuple(d["position_m"]),
            period_s=d["period_s"],
            sf=d["sf"],
            tx_power_dbm=d.get("tx_power_dbm", 14),
            device_class=d.get("device_class", "A"),
            fport=d.get("fport", 1),
            payload_len=d.get("payload_len", 12),
            adr=d.get("adr", True),
            battery_mah=d.get("battery_mah", 1000.0),
            nwk_skey=bytes.fromhex(d["nwk_skey"]) if "nwk_skey" in d else b"",
            app_skey=bytes.fromhex(d["app_skey"]) if "app_skey" in d else b"",
        )
        for d in doc["devices"]
    )
    gateways = tuple(
        GatewaySpec(
            gateway_id=g["gateway_id"],
            position_m=tuple(g["position_m"]),
            ru_params=g.get("ru", {}),
            du_params=g.get("du", {}),
        )
        for g in doc["gateways"]
    )
    defaults = registry.netsim_defaults
    ch = doc.get("channel", {})
    channel = ChannelParams(
        path_loss_exponent=ch.get("path_loss_exponent", defaults["path_loss_exponent"]),
        reference_loss_db=ch.get("reference_loss_db", defaults["reference_loss_db"]),
        reference_distance_m=ch.get(
            "reference_distance_m", defaults["reference_distance_m"]
        ),
        noise_figure_db=ch.get("noise_figure_db", defaults["noise_figure_db"]),
        awgn_enabled=ch.get("awgn_enabled", True),
    )
    ric_doc = doc.get("ric", {})
    ric = RicSpec(
        enabled=ric_doc.get("enabled", False),
        adr_driver=ric_doc.get("adr_driver", "ns"),
        xapps=tuple(ric_doc.get("xapps", ())),
        policies=tuple(
            (p["policy_type"], p["policy_id"], p["body"])
            for p in ric_doc.get("policies", ())
        ),
    )
    downlinks = tuple(
        DownlinkSpec(
            at_s=dl["at_s"],
            dev_addr=int(dl["dev_addr"], 16),
            payload=bytes.fromhex(dl["payload_hex"]),
            fport=dl.get("fport", 1),
            priority=dl.get("priority", 0),
        )
        for dl in doc.get("downlinks", ())
    )
    return Scenario(
        seed=doc["seed"],
        duration_s=doc["duration_s"],
        devices=devices,
        gateways=gateways,
        name=doc.get("name", "scenario"),
        mode=doc.get("mode", MODULAR),
        channel=channel,
        ric=ric,
        downlinks=downlinks,
    )
