"""E2 message taxonomy and its deterministic TLV wire encoding.

The message taxonomy mirrors E2AP (subscription, indication, control with
acknowledgement), and the service-model content carries KPI records or
control commands. Full ASN.1 PER is out of scope; this tag-length-value
binary encoding (documented in docs/wire_formats.md) is the stand-in.

Layout: version octet (0x01) | kind octet | transaction id (u32) | TLVs.
TLV = tag (u8) | length (u16, big-endian) | value. Metric maps encode
sorted by name so encoding is canonical.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Optional, Union

__all__ = [
    "E2Kind",
    "E2Message",
    "KpiRecord",
    "ControlCommand",
    "SubscriptionTrigger",
    "E2CodecError",
    "encode_e2",
    "decode_e2",
]

E2_VERSION = 0x01

_TAG_NODE_ID = 0x01
_TAG_SUBSCRIPTION_ID = 0x02
_TAG_TRIGGER = 0x03
_TAG_KPI = 0x04
_TAG_CONTROL = 0x05
_TAG_REASON = 0x06


class E2CodecError(ValueError):
    """Malformed E2 message octets."""


class E2Kind(IntEnum):
    SUBSCRIPTION_REQ = 1
    SUBSCRIPTION_RESP = 2
    INDICATION = 3
    CONTROL_REQ = 4
    CONTROL_ACK = 5
    CONTROL_FAIL = 6


@dataclass
class KpiRecord:
    """One node-scoped (or device-scoped) bundle of metrics."""

    node_id: str
    timestamp_ns: int
    metrics: dict[str, float] = field(default_factory=dict)


@dataclass
class SubscriptionTrigger:
    period_ns: int = 0  # 0 = event-driven
    event: str = ""


@dataclass
class ControlCommand:
    target_node: str
    parameter_path: str
    value: Union[float, int, str, bool, dict]
    deadline_ns: int = 0
    caused_by_ns: int = 0  # timestamp of the triggering indication, 0 = unsolicited


@dataclass
class E2Message:
    kind: E2Kind
    transaction_id: int
    node_id: str
    subscription_id: Optional[int] = None
    trigger: Optional[SubscriptionTrigger] = None
    kpi: Optional[KpiRecord] = None
    control: Optional[ControlCommand] = None
    reason: str = ""


def _tlv(tag: int, value: bytes) -> bytes:
    if len(value) > 0xFFFF:
        raise E2CodecError(f"TLV value of {len(value)} octets exceeds 65535")
    return struct.pack(">BH", tag, len(value)) + value


def _pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack(">H", len(raw)) + raw


def _encode_kpi(kpi: KpiRecord) -> bytes:
    out = _pack_str(kpi.node_id) + struct.pack(">Q", kpi.timestamp_ns)
    names = sorted(kpi.metrics)
    out += struct.pack(">H", len(names))
    for name in names:
        out += _pack_str(name) + struct.pack(">d", float(kpi.metrics[name]))
    return out


_VALUE_CODES = {float: b"F", int: b"I", str: b"S", bool: b"B"}


def _encode_value(value) -> bytes:
    if isinstance(value, bool):
        return b"B" + (b"\x01" if value else b"\x00")
    if isinstance(value, int):
        return b"I" + struct.pack(">q", value)
    if isinstance(value, float):
        return b"F" + struct.pack(">d", value)
    if isinstance(value, str):
        return b"S" + _pack_str(value)
    if isinstance(value, dict):
        return b"J" + _pack_str(json.dumps(value, sort_keys=True))
    raise E2CodecError(f"unsupported control value type {type(value).__name__}")


def _encode_control(cmd: ControlCommand) -> bytes:
    return (
        _pack_str(cmd.target_node)
        + _pack_str(cmd.parameter_path)
        + _encode_value(cmd.value)
        + struct.pack(">QQ", cmd.deadline_ns, cmd.caused_by_ns)
    )


def encode_e2(msg: E2Message) -> bytes:
    """Serialize; raises on taxonomy violations (e.g. indication without sub id)."""
    if msg.kind == E2Kind.INDICATION and msg.subscription_id is None:
        raise E2CodecError("an INDICATION must carry its subscription id")
    out = struct.pack(">BBI", E2_VERSION, int(msg.kind), msg.transaction_id & 0xFFFFFFFF)
    out += _tlv(_TAG_NODE_ID, msg.node_id.encode("utf-8"))
    if msg.subscription_id is not None:
        out += _tlv(_TAG_SUBSCRIPTION_ID, struct.pack(">I", msg.subscription_id))
    if msg.trigger is not None:
        out += _tlv(
            _TAG_TRIGGER,
            struct.pack(">Q", msg.trigger.period_ns) + msg.trigger.event.encode("utf-8"),
        )
    if msg.kpi is not None:
        out += _tlv(_TAG_KPI, _encode_kpi(msg.kpi))
    if msg.control is not None:
        out += _tlv(_TAG_CONTROL, _encode_control(msg.control))
    if msg.reason:
        out += _tlv(_TAG_REASON, msg.reason.encode("utf-8"))
    return out


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise E2CodecError(f"truncated E2 message at octet {self.pos}")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def str16(self) -> str:
        (n,) = struct.unpack(">H", self.take(2))
        return self.take(n).decode("utf-8")

    def done(self) -> bool:
        return self.pos >= len(self.data)


def _decode_kpi(raw: bytes) -> KpiRecord:
    r = _Reader(raw)
    node = r.str16()
    (ts,) = struct.unpack(">Q", r.take(8))
    (count,) = struct.unpack(">H", r.take(2))
    metrics = {}
    for _ in range(count):
        name = r.str16()
        (value,) = struct.unpack(">d", r.take(8))
        metrics[name] = value
    if not r.done():
        raise E2CodecError("trailing octets in KPI payload")
    return KpiRecord(node, ts, metrics)


def _decode_control(raw: bytes) -> ControlCommand:
    r = _Reader(raw)
    target = r.str16()
    path = r.str16()
    code = r.take(1)
    if code == b"B":
        value: Union[float, int, str, bool, dict] = r.take(1) == b"\x01"
    elif code == b"I":
        (value,) = struct.unpack(">q", r.take(8))
    elif code == b"F":
        (value,) = struct.unpack(">d", r.take(8))
    elif code == b"S":
        value = r.str16()
    elif code == b"J":
        value = json.loads(r.str16())
    else:
        raise E2CodecError(f"unknown control value code {code!r}")
    deadline, caused = struct.unpack(">QQ", r.take(16))
    if not r.done():
        raise E2CodecError("trailing octets in control payload")
    return ControlCommand(target, path, value, deadline, caused)


def decode_e2(data: bytes) -> E2Message:
    r = _Reader(bytes(data))
    version, kind_raw = struct.unpack(">BB", r.take(2))
    if version != E2_VERSION:
        raise E2CodecError(f"unknown E2 encoding version {version}")
    try:
        kind = E2Kind(kind_raw)
    except ValueError:
        raise E2CodecError(f"unknown E2 message kind {kind_raw}") from None
    (txid,) = struct.unpack(">I", r.take(4))
    msg = E2Message(kind=kind, transaction_id=txid, node_id="")
    seen = set()
    while not r.done():
        tag, length = struct.unpack(">BH", r.take(3))
        value = r.take(length)
        if tag in seen:
            raise E2CodecError(f"duplicate TLV tag {tag:#04x}")
        seen.add(tag)
        if tag == _TAG_NODE_ID:
            msg.node_id = value.decode("utf-8")
        elif tag == _TAG_SUBSCRIPTION_ID:
            (msg.subscription_id,) = struct.unpack(">I", value)
        elif tag == _TAG_TRIGGER:
            (period,) = struct.unpack(">Q", value[:8])
            msg.trigger = SubscriptionTrigger(period, value[8:].decode("utf-8"))
        elif tag == _TAG_KPI:
            msg.kpi = _decode_kpi(value)
        elif tag == _TAG_CONTROL:
            msg.control = _decode_control(value)
        elif tag == _TAG_REASON:
            msg.reason = value.decode("utf-8")
        else:
            raise E2CodecError(f"unknown TLV tag {tag:#04x}")
    if _TAG_NODE_ID not in seen:
        raise E2CodecError("missing node id TLV")
    if msg.kind == E2Kind.INDICATION and msg.subscription_id is None:
        raise E2CodecError("an INDICATION must carry its subscription id")
    return msg
