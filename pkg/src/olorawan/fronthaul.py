"""Bit-exact codec for eCPRI frames carrying LoRaWAN sections (type 0x09).

Wire layout (full bit-level reference in docs/wire_formats.md):

* 4-octet eCPRI common header: revision(4) | reserved(3) | concat(1),
  message type (8), payload size (16, big-endian).
* LoRaWAN section payload:
    - 5-octet section header group:
        octet 0  direction(1) | payload_version(3) | filter_index(4)
        octet 1  section id
        octet 2  section options length (optional-region octets, saturating)
        octet 3  spreading factor(4) | bandwidth code(4)
        octet 4  LoRaWAN version code
    - direction-required attributes, in section-table row order,
    - 40-bit presence bitmap, bit i == table row i (bit 0 = MSB of the
      first bitmap octet; bits 37..39 reserved, must be zero),
    - present optional attributes in table row order.

Fixed multi-octet integers are big-endian. Sub-octet fields are packed
MSB-first into octet-aligned groups; a group is zero-padded and flushed
before any full-octet or variable field. Variable fields carry a 16-bit
octet-count prefix. All encoders are canonical: re-encoding a decoded
section reproduces the input octets exactly.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, fields as dc_fields
from typing import Optional

__all__ = [
    "LORAWAN_SECTION_TYPE",
    "LORAWAN_VERSION_1_0",
    "UL",
    "DL",
    "BW_CODES",
    "BW_CODE_FROM_HZ",
    "ATTRIBUTES",
    "AttrSpec",
    "LoRaWANSection",
    "EcpriHeader",
    "FronthaulError",
    "SectionValidationError",
    "FrameLengthError",
    "FrameFormatError",
    "UnknownMessageTypeError",
    "encode_section",
    "decode_section",
    "validate_section",
    "encode_ecpri",
    "decode_ecpri",
    "parse_ecpri_header",
    "encode_frame",
    "decode_frame",
    "quantize_peak_metric",
    "peak_metric_to_float",
    "quantize_snr_db",
    "quantize_rssi_dbm",
    "section_to_dict",
    "section_from_dict",
    "CAPTURE_MAGIC",
    "write_capture",
    "read_capture",
]

LORAWAN_SECTION_TYPE = 0x09
LORAWAN_VERSION_1_0 = 0x10  # major.minor nibbles: 1.0.x
ECPRI_REVISION = 1

UL = 0
DL = 1

BW_CODES = {0: 125000, 1: 250000, 2: 500000}
BW_CODE_FROM_HZ = {hz: code for code, hz in BW_CODES.items()}


class FronthaulError(ValueError):
    """Base class for every structured codec failure."""


class SectionValidationError(FronthaulError):
    def __init__(self, violations: list[str]):
        super().__init__("; ".join(violations))
        self.violations = violations


class FrameLengthError(FronthaulError):
    """Truncated input or declared size disagrees with the octet count."""


class FrameFormatError(FronthaulError):
    """Reserved bits set, non-canonical padding, or malformed field content."""


class UnknownMessageTypeError(FronthaulError):
    """eCPRI message type outside the known 0x00..0x09 set."""


# ---------------------------------------------------------------------------
# attribute table
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AttrSpec:
    """One row of the section attribute table."""

    row: int
    name: str           # attribute name as published
    attr: str           # LoRaWANSection field name
    direction: str      # "UL" | "DL" | "BOTH"
    required: bool
    bits: int | str     # bit width, or "var"
    kind: str           # wire kind: header|var|u8|u16|u32|u64|s8|rssi8|bits|demod|samples


ATTRIBUTES: tuple[AttrSpec, ...] = (
    AttrSpec(0, "iSample", "i_samples", "UL", False, "var", "samples"),
    AttrSpec(1, "qSample", "q_samples", "UL", False, "var", "samples"),
    AttrSpec(2, "Demodulation Information", "demodulation_info", "UL", True, "var", "demod"),
    AttrSpec(3, "Uplink Channel SNR", "uplink_snr_db", "UL", True, 8, "s8"),
    AttrSpec(4, "Battery Status of Device", "battery_status", "UL", False, 8, "u8"),
    AttrSpec(5, "Uplink Frequency Hopping", "uplink_freq_hopping", "UL", False, 1, "bits"),
    AttrSpec(6, "Timestamp Reception", "timestamp_reception", "UL", True, 64, "u64"),
    AttrSpec(7, "Uplink Channel RSSI", "uplink_rssi_dbm", "UL", True, 8, "rssi8"),
    AttrSpec(8, "Uplink Channel Utilization", "channel_utilization_pct", "UL", False, 8, "u8"),
    AttrSpec(9, "Device Power Source", "device_power_source", "UL", False, 3, "bits"),
    AttrSpec(10, "Timing Advance", "timing_advance", "UL", True, 8, "u8"),
    AttrSpec(11, "Receive Window Configuration", "receive_window_cfg", "BOTH", False, 8, "u8"),
    AttrSpec(12, "Channel Plan Configuration", "channel_plan_cfg", "BOTH", False, 4, "bits"),
    AttrSpec(13, "Frequency Band", "frequency_band", "BOTH", False, 4, "bits"),
    AttrSpec(14, "Spreading Factor", "spreading_factor", "BOTH", True, 4, "header"),
    AttrSpec(15, "End-device Firmware Version", "firmware_version", "BOTH", False, "var", "var"),
    AttrSpec(16, "Preamble Length", "preamble_length", "BOTH", False, 8, "u8"),
    AttrSpec(17, "Antenna Selection", "antenna_selection", "BOTH", False, "var", "var"),
    AttrSpec(18, "Channel Index", "channel_index", "BOTH", False, 8, "u8"),
    AttrSpec(19, "Bandwidth", "bandwidth_code", "BOTH", True, 4, "header"),
    AttrSpec(20, "LoRaWAN Version", "lorawan_version", "BOTH", True, 8, "header"),
    AttrSpec(21, "Data Direction", "direction", "BOTH", True, 1, "header"),
    AttrSpec(22, "Payload Version", "payload_version", "BOTH", True, 3, "header"),
    AttrSpec(23, "Filter Index", "filter_index", "BOTH", False, 4, "header"),
    AttrSpec(24, "Section ID", "section_id", "BOTH", True, 8, "header"),
    AttrSpec(25, "Section Options Length", "section_options_length", "BOTH", True, 8, "header"),
    AttrSpec(26, "Device Address", "device_address", "DL", True, 32, "u32"),
    AttrSpec(27, "Downlink Payload Content", "dl_payload", "DL", True, "var", "var"),
    AttrSpec(28, "Frequency Hopping Pattern", "freq_hopping_pattern", "DL", False, 8, "u8"),
    AttrSpec(29, "Transmission power level", "tx_power_dbm", "DL", True, 8, "u8"),
    AttrSpec(30, "Transmission Slot", "transmission_slot", "DL", True, 64, "u64"),
    AttrSpec(31, "RX Window Configuration", "rx_window_cfg", "DL", False, 16, "u16"),
    AttrSpec(32, "Device Class Type", "device_class", "DL", False, 2, "bits"),
    AttrSpec(33, "Energy Efficiency Considerations", "energy_mode", "DL", False, 8, "u8"),
    AttrSpec(34, "Network Synchronization", "network_sync", "DL", False, "var", "var"),
    AttrSpec(35, "Traffic Prioritization", "traffic_priority", "DL", False, "var", "var"),
    AttrSpec(36, "Beacon Broadcasting", "beacon_broadcast", "DL", False, "var", "var"),
)

BITMAP_OCTETS = 5
_RESERVED_BITS = range(len(ATTRIBUTES), BITMAP_OCTETS * 8)

_BY_ATTR = {a.attr: a for a in ATTRIBUTES}
# rows carried outside the required/optional regions
_HEADER_ROWS = {a.row for a in ATTRIBUTES if a.kind == "header"}


def _applicable(spec: AttrSpec, direction: int) -> bool:
    return spec.direction == "BOTH" or spec.direction == ("DL" if direction else "UL")


@dataclass
class LoRaWANSection:
    """All attributes of the section table, in native Python form.

    ``section_options_length`` is derived from the encoded optional region
    rather than stored; decode validates the wire value against it.
    """

    direction: int
    spreading_factor: int
    bandwidth_code: int
    payload_version: int = 0
    section_id: int = 0
    lorawan_version: int = LORAWAN_VERSION_1_0
    filter_index: Optional[int] = None

    # UL required
    demodulation_info: Optional[tuple[tuple[int, int], ...]] = None
    uplink_snr_db: Optional[int] = None
    uplink_rssi_dbm: Optional[int] = None
    timestamp_reception: Optional[int] = None
    timing_advance: Optional[int] = None

    # UL optional
    i_samples: Optional[tuple[float, ...]] = None
    q_samples: Optional[tuple[float, ...]] = None
    battery_status: Optional[int] = None
    uplink_freq_hopping: Optional[int] = None
    channel_utilization_pct: Optional[int] = None
    device_power_source: Optional[int] = None

    # UL/DL optional
    receive_window_cfg: Optional[int] = None
    channel_plan_cfg: Optional[int] = None
    frequency_band: Optional[int] = None
    firmware_version: Optional[bytes] = None
    preamble_length: Optional[int] = None
    antenna_selection: Optional[bytes] = None
    channel_index: Optional[int] = None

    # DL
    device_address: Optional[int] = None
    dl_payload: Optional[bytes] = None
    tx_power_dbm: Optional[int] = None
    transmission_slot: Optional[int] = None
    freq_hopping_pattern: Optional[int] = None
    rx_window_cfg: Optional[int] = None
    device_class: Optional[int] = None
    energy_mode: Optional[int] = None
    network_sync: Optional[bytes] = None
    traffic_priority: Optional[bytes] = None
    beacon_broadcast: Optional[bytes] = None

    def __post_init__(self):
        for name in ("demodulation_info", "i_samples", "q_samples"):
            value = getattr(self, name)
            if value is not None and not isinstance(value, tuple):
                setattr(self, name, tuple(tuple(v) if isinstance(v, list) else v for v in value))

    @property
    def bw_hz(self) -> int:
        return BW_CODES.get(self.bandwidth_code, 0)

    @property
    def section_options_length(self) -> int:
        return min(len(_encode_optional_region(self)), 255)

    def present(self, attr: str) -> bool:
        return getattr(self, attr) is not None


# ---------------------------------------------------------------------------
# scalar quantizers (RU-side helpers shared with tests)
# ---------------------------------------------------------------------------


def quantize_peak_metric(metric: float) -> int:
    """Peak metric to unsigned Q6.2 fixed point (0.25 steps, saturating)."""
    return max(0, min(255, round(metric * 4)))


def peak_metric_to_float(raw: int) -> float:
    return raw / 4.0


def quantize_snr_db(snr_db: float) -> int:
    return max(-128, min(127, round(snr_db)))


def quantize_rssi_dbm(rssi_dbm: float) -> int:
    return max(-256, min(-1, round(rssi_dbm)))


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------


def _range_violation(name: str, value, lo: int, hi: int, out: list[str]):
    if not isinstance(value, int) or isinstance(value, bool) or not lo <= value <= hi:
        out.append(f"{name}: value {value!r} outside {lo}..{hi}")


def validate_section(s: LoRaWANSection) -> list[str]:
    """Invariant and direction-requirement check; violations as data."""
    out: list[str] = []
    if s.direction not in (UL, DL):
        out.append(f"direction: {s.direction!r} is not UL(0) or DL(1)")
        return out
    for spec in ATTRIBUTES:
        if spec.attr == "section_options_length":
            continue
        value = getattr(s, spec.attr)
        applicable = _applicable(spec, s.direction)
        if not applicable:
            if value is not None:
                out.append(f"{spec.name}: not applicable to {'DL' if s.direction else 'UL'}")
            continue
        if value is None:
            if spec.required:
                out.append(f"{spec.name}: required for {'DL' if s.direction else 'UL'} but absent")
            continue
        _check_value(spec, value, out)
    return out


def _check_value(spec: AttrSpec, value, out: list[str]):
    name = spec.name
    if spec.kind == "demod":
        if not all(
            isinstance(p, tuple) and len(p) == 2
            and isinstance(p[0], int) and 0 <= p[0] <= 0xFFFF
            and isinstance(p[1], int) and 0 <= p[1] <= 0xFF
            for p in value
        ):
            out.append(f"{name}: entries must be (symbol u16, metric u8) pairs")
        elif len(value) > (0xFFFF - 2) // 3:
            out.append(f"{name}: too many symbol entries for a 16-bit field length")
    elif spec.kind == "samples":
        if not all(isinstance(v, float) or isinstance(v, int) for v in value):
            out.append(f"{name}: samples must be floats")
        elif len(value) * 8 > 0xFFFF:
            out.append(f"{name}: {len(value)} samples exceed the 16-bit field length")
    elif spec.kind == "var":
        if not isinstance(value, (bytes, bytearray)):
            out.append(f"{name}: must be octets")
        elif len(value) > 0xFFFF:
            out.append(f"{name}: {len(value)} octets exceed the 16-bit field length")
    elif spec.kind == "s8":
        _range_violation(name, value, -128, 127, out)
    elif spec.kind == "rssi8":
        _range_violation(name, value, -256, -1, out)
    elif spec.kind == "bits" or spec.kind == "header":
        width = spec.bits if isinstance(spec.bits, int) else 8
        hi = (1 << width) - 1
        if spec.attr == "spreading_factor":
            _range_violation(name, value, 7, 12, out)
        elif spec.attr == "bandwidth_code":
            if value not in BW_CODES:
                out.append(f"{name}: code {value!r} does not map to 125/250/500 kHz")
        elif spec.attr == "device_class":
            _range_violation(name, value, 0, 2, out)
        else:
            _range_violation(name, value, 0, hi, out)
    elif spec.kind in ("u8", "u16", "u32", "u64"):
        width = int(spec.bits)
        if spec.attr == "tx_power_dbm":
            _range_violation(name, value, 2, 20, out)
        else:
            _range_violation(name, value, 0, (1 << width) - 1, out)


# ---------------------------------------------------------------------------
# encoding
# ---------------------------------------------------------------------------


class _BitPacker:
    """Packs sub-octet fields MSB-first into octet-aligned groups."""

    def __init__(self):
        self.out = bytearray()
        self._acc = 0
        self._nbits = 0

    def put_bits(self, value: int, width: int):
        self._acc = (self._acc << width) | (value & ((1 << width) - 1))
        self._nbits += width
        while self._nbits >= 8:
            self._nbits -= 8
            self.out.append((self._acc >> self._nbits) & 0xFF)
        self._acc &= (1 << self._nbits) - 1

    def flush(self):
        if self._nbits:
            self.out.append((self._acc << (8 - self._nbits)) & 0xFF)
            self._acc = 0
            self._nbits = 0

    def put_bytes(self, data: bytes):
        self.flush()
        self.out.extend(data)

    def bytes(self) -> bytes:
        self.flush()
        return bytes(self.out)


def _encode_var(content: bytes) -> bytes:
    return struct.pack(">H", len(content)) + content


def _encode_demod(pairs) -> bytes:
    body = struct.pack(">H", len(pairs))
    for sym, metric in pairs:
        body += struct.pack(">HB", sym, metric)
    return _encode_var(body)


def _encode_samples(values) -> bytes:
    return _encode_var(struct.pack(f">{len(values)}d", *values))


def _encode_field(spec: AttrSpec, value, packer: _BitPacker):
    if spec.kind == "demod":
        packer.put_bytes(_encode_demod(value))
    elif spec.kind == "samples":
        packer.put_bytes(_encode_samples(value))
    elif spec.kind == "var":
        packer.put_bytes(_encode_var(bytes(value)))
    elif spec.kind == "s8":
        packer.put_bytes(struct.pack(">b", value))
    elif spec.kind == "rssi8":
        packer.put_bytes(struct.pack(">B", (value + 128) & 0xFF))
    elif spec.kind == "u8":
        packer.put_bytes(struct.pack(">B", value))
    elif spec.kind == "u16":
        packer.put_bytes(struct.pack(">H", value))
    elif spec.kind == "u32":
        packer.put_bytes(struct.pack(">I", value))
    elif spec.kind == "u64":
        packer.put_bytes(struct.pack(">Q", value))
    elif spec.kind == "bits":
        packer.put_bits(value, int(spec.bits))
    else:  # pragma: no cover - header fields never reach here
        raise AssertionError(spec.kind)


def _encode_optional_region(s: LoRaWANSection) -> bytes:
    packer = _BitPacker()
    for spec in ATTRIBUTES:
        if spec.required or spec.kind == "header":
            continue
        value = getattr(s, spec.attr)
        if value is None or not _applicable(spec, s.direction):
            continue
        _encode_field(spec, value, packer)
    return packer.bytes()


def _presence_bitmap(s: LoRaWANSection) -> bytes:
    bits = 0
    for spec in ATTRIBUTES:
        present = spec.required or getattr(s, spec.attr) is not None
        if _applicable(spec, s.direction) and present:
            bits |= 1 << (BITMAP_OCTETS * 8 - 1 - spec.row)
    return bits.to_bytes(BITMAP_OCTETS, "big")


def encode_section(s: LoRaWANSection) -> bytes:
    """Serialize a section to its canonical octet layout."""
    violations = validate_section(s)
    if violations:
        raise SectionValidationError(violations)
    optional = _encode_optional_region(s)
    head = bytes(
        [
            (s.direction << 7) | (s.payload_version << 4) | (s.filter_index or 0),
            s.section_id,
            min(len(optional), 255),
            (s.spreading_factor << 4) | s.bandwidth_code,
            s.lorawan_version,
        ]
    )
    packer = _BitPacker()
    for spec in ATTRIBUTES:
        if not spec.required or spec.kind == "header" or not _applicable(spec, s.direction):
            continue
        _encode_field(spec, getattr(s, spec.attr), packer)
    return head + packer.bytes() + _presence_bitmap(s) + optional


# ---------------------------------------------------------------------------
# decoding
# ---------------------------------------------------------------------------


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise FrameLengthError(
                f"truncated at octet {self.pos}: need {n} more octets, "
                f"have {len(self.data) - self.pos}"
            )
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def u8(self) -> int:
        return self.take(1)[0]

    def u16(self) -> int:
        return struct.unpack(">H", self.take(2))[0]

    def remaining(self) -> int:
        return len(self.data) - self.pos


def _decode_var(reader: _Reader) -> bytes:
    return reader.take(reader.u16())


def _decode_demod(reader: _Reader):
    body = _decode_var(reader)
    if len(body) < 2:
        raise FrameFormatError("demodulation info shorter than its pair count")
    (count,) = struct.unpack(">H", body[:2])
    if len(body) != 2 + 3 * count:
        raise FrameFormatError(
            f"demodulation info length {len(body)} does not match {count} pairs"
        )
    pairs = []
    for i in range(count):
        sym, metric = struct.unpack(">HB", body[2 + 3 * i : 5 + 3 * i])
        pairs.append((sym, metric))
    return tuple(pairs)


def _decode_samples(reader: _Reader):
    body = _decode_var(reader)
    if len(body) % 8:
        raise FrameFormatError("IQ sample field length is not a multiple of 8")
    return tuple(struct.unpack(f">{len(body) // 8}d", body))


class _BitUnpacker:
    """Mirror of _BitPacker: reads sub-octet groups, checks zero padding."""

    def __init__(self, reader: _Reader):
        self.reader = reader
        self._acc = 0
        self._nbits = 0

    def get_bits(self, width: int) -> int:
        while self._nbits < width:
            self._acc = (self._acc << 8) | self.reader.u8()
            self._nbits += 8
        self._nbits -= width
        value = (self._acc >> self._nbits) & ((1 << width) - 1)
        self._acc &= (1 << self._nbits) - 1
        return value

    def flush(self):
        if self._nbits:
            if self._acc:
                raise FrameFormatError("nonzero padding in a sub-octet field group")
            self._acc = 0
            self._nbits = 0


def _decode_field(spec: AttrSpec, reader: _Reader, bits: _BitUnpacker):
    if spec.kind == "demod":
        bits.flush()
        return _decode_demod(reader)
    if spec.kind == "samples":
        bits.flush()
        return _decode_samples(reader)
    if spec.kind == "var":
        bits.flush()
        return _decode_var(reader)
    if spec.kind == "bits":
        return bits.get_bits(int(spec.bits))
    bits.flush()
    if spec.kind == "s8":
        return struct.unpack(">b", reader.take(1))[0]
    if spec.kind == "rssi8":
        raw = reader.u8()
        signed = raw - 256 if raw >= 128 else raw
        return signed - 128
    if spec.kind == "u8":
        return reader.u8()
    if spec.kind == "u16":
        return reader.u16()
    if spec.kind == "u32":
        return struct.unpack(">I", reader.take(4))[0]
    if spec.kind == "u64":
        return struct.unpack(">Q", reader.take(8))[0]
    raise AssertionError(spec.kind)  # pragma: no cover


def decode_section(data: bytes) -> LoRaWANSection:
    """Parse and validate a section; exact inverse of :func:`encode_section`."""
    reader = _Reader(bytes(data))
    head = reader.take(5)
    direction = head[0] >> 7
    payload_version = (head[0] >> 4) & 0x7
    filter_nibble = head[0] & 0xF
    section_id = head[1]
    options_length = head[2]
    sf = head[3] >> 4
    bw_code = head[3] & 0xF
    version = head[4]

    values: dict = {
        "direction": direction,
        "payload_version": payload_version,
        "section_id": section_id,
        "spreading_factor": sf,
        "bandwidth_code": bw_code,
        "lorawan_version": version,
    }

    bits = _BitUnpacker(reader)
    for spec in ATTRIBUTES:
        if not spec.required or spec.kind == "header" or not _applicable(spec, direction):
            continue
        values[spec.attr] = _decode_field(spec, reader, bits)
    bits.flush()

    bitmap = int.from_bytes(reader.take(BITMAP_OCTETS), "big")

    def bit(row: int) -> int:
        return (bitmap >> (BITMAP_OCTETS * 8 - 1 - row)) & 1

    for row in _RESERVED_BITS:
        if bit(row):
            raise FrameFormatError(f"reserved presence bit {row} set")
    for spec in ATTRIBUTES:
        applicable = _applicable(spec, direction)
        if spec.required and applicable and not bit(spec.row):
            raise SectionValidationError(
                [f"{spec.name}: required for {'DL' if direction else 'UL'} but presence bit clear"]
            )
        if not applicable and bit(spec.row):
            raise SectionValidationError(
                [f"{spec.name}: present but not applicable to {'DL' if direction else 'UL'}"]
            )

    if bit(_BY_ATTR["filter_index"].row):
        values["filter_index"] = filter_nibble
    elif filter_nibble:
        raise FrameFormatError("filter index nibble nonzero while its presence bit is clear")

    optional_start = reader.pos
    bits = _BitUnpacker(reader)
    for spec in ATTRIBUTES:
        if spec.required or spec.kind == "header" or not _applicable(spec, direction):
            continue
        if bit(spec.row):
            values[spec.attr] = _decode_field(spec, reader, bits)
    bits.flush()
    optional_len = reader.pos - optional_start
    if options_length != min(optional_len, 255):
        raise FrameLengthError(
            f"section options length {options_length} != optional region {optional_len}"
        )
    if reader.remaining():
        raise FrameLengthError(f"{reader.remaining()} trailing octets after the section")

    section = LoRaWANSection(**values)
    violations = validate_section(section)
    if violations:
        raise SectionValidationError(violations)
    return section


# ---------------------------------------------------------------------------
# eCPRI wrapping
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EcpriHeader:
    protocol_revision: int
    concat_bit: int
    message_type: int
    payload_size: int


def encode_ecpri(section_bytes: bytes, msg_type: int) -> bytes:
    """Prepend the 4-octet eCPRI common header (revision 1, reserved 0)."""
    if len(section_bytes) > 0xFFFF:
        raise FronthaulError(f"payload of {len(section_bytes)} octets exceeds 65535")
    if not 0 <= msg_type <= 0xFF:
        raise FronthaulError(f"message type {msg_type} is not an octet")
    return bytes([ECPRI_REVISION << 4, msg_type]) + struct.pack(">H", len(section_bytes)) + bytes(section_bytes)


def parse_ecpri_header(frame: bytes) -> EcpriHeader:
    if len(frame) < 4:
        raise FrameLengthError(f"eCPRI frame of {len(frame)} octets is shorter than its header")
    first = frame[0]
    if (first >> 1) & 0x7:
        raise FrameFormatError("eCPRI reserved bits are nonzero")
    return EcpriHeader(first >> 4, first & 1, frame[1], struct.unpack(">H", frame[2:4])[0])


def decode_ecpri(frame: bytes) -> tuple[int, bytes]:
    """Split a frame into (message type, payload); cross-checks the size field."""
    header = parse_ecpri_header(frame)
    payload = frame[4:]
    if header.payload_size != len(payload):
        raise FrameLengthError(
            f"declared payload size {header.payload_size} but {len(payload)} octets follow"
        )
    if header.message_type > LORAWAN_SECTION_TYPE:
        raise UnknownMessageTypeError(
            f"message type {header.message_type:#04x} outside 0x00..0x09"
        )
    return header.message_type, payload


def encode_frame(section: LoRaWANSection) -> bytes:
    """Encode a section and wrap it as an eCPRI frame of type 0x09."""
    return encode_ecpri(encode_section(section), LORAWAN_SECTION_TYPE)


def decode_frame(frame: bytes) -> LoRaWANSection:
    """Unwrap an eCPRI frame that must carry a LoRaWAN section."""
    msg_type, payload = decode_ecpri(frame)
    if msg_type != LORAWAN_SECTION_TYPE:
        raise UnknownMessageTypeError(
            f"expected LoRaWAN section type 0x09, got {msg_type:#04x}"
        )
    return decode_section(payload)


# ---------------------------------------------------------------------------
# JSON form (codec CLI and fixtures)
# ---------------------------------------------------------------------------


def section_to_dict(s: LoRaWANSection) -> dict:
    out: dict = {}
    for f in dc_fields(s):
        value = getattr(s, f.name)
        if value is None:
            continue
        if isinstance(value, bytes):
            value = value.hex()
        elif f.name in ("i_samples", "q_samples"):
            value = list(value)
        elif f.name == "demodulation_info":
            value = [list(p) for p in value]
        out[f.name] = value
    return out


def section_from_dict(doc: dict) -> LoRaWANSection:
    known = {f.name for f in dc_fields(LoRaWANSection)}
    unknown = set(doc) - known
    if unknown:
        raise SectionValidationError([f"{name}: unknown attribute" for name in sorted(unknown)])
    values = dict(doc)
    for name in ("firmware_version", "antenna_selection", "dl_payload",
                 "network_sync", "traffic_priority", "beacon_broadcast"):
        if name in values and isinstance(values[name], str):
            values[name] = bytes.fromhex(values[name])
    if "demodulation_info" in values:
        values["demodulation_info"] = tuple(tuple(p) for p in values["demodulation_info"])
    for name in ("i_samples", "q_samples"):
        if name in values:
            values[name] = tuple(float(v) for v in values[name])
    try:
        return LoRaWANSection(**values)
    except TypeError as exc:
        raise SectionValidationError([str(exc)]) from exc


# ---------------------------------------------------------------------------
# capture files
# ---------------------------------------------------------------------------

CAPTURE_MAGIC = b"OLRW1"


def write_capture(path, frames) -> None:
    """Write frames as the magic header plus u32-length-prefixed records."""
    with open(path, "wb") as fh:
        fh.write(CAPTURE_MAGIC)
        for frame in frames:
            fh.write(struct.pack(">I", len(frame)))
            fh.write(frame)


def read_capture(path) -> list[bytes]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if not blob.startswith(CAPTURE_MAGIC):
        raise FrameFormatError("missing OLRW1 capture magic")
    frames = []
    pos = len(CAPTURE_MAGIC)
    while pos < len(blob):
        if pos + 4 > len(blob):
            raise FrameLengthError(f"truncated frame length at offset {pos}")
        (length,) = struct.unpack(">I", blob[pos : pos + 4])
        pos += 4
        if pos + length > len(blob):
            raise FrameLengthError(f"truncated frame at offset {pos}: need {length} octets")
        frames.append(blob[pos : pos + length])
        pos += length
    return frames
