"""LoRaWAN 1.0.x MAC frames and the two-layer AES security.

Frame construction/parsing, 4-byte AES-CMAC MIC over the B0 block,
counter-block payload encryption (the A_i construction, XOR-symmetric for
encrypt and decrypt), and 16-bit frame counters with a 32-bit rollover
window. ABP sessions only; join is out of scope.

Octet layout (see docs/wire_formats.md):
MHDR(1) | DevAddr(4, LE) | FCtrl(1) | FCnt(2, LE) | FOpts(0..15)
| [FPort(1) | FRMPayload] | MIC(4). FPort is present iff FRMPayload is
non-empty. FRMPayload uses the application key for ports >= 1 and the
network key for port 0 (MAC commands).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Optional

from cryptography.hazmat.primitives import cmac
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes

from .constants import load_constants

__all__ = [
    "UPLINK",
    "DOWNLINK",
    "MTYPE_UNCONFIRMED_UP",
    "MTYPE_UNCONFIRMED_DOWN",
    "MTYPE_CONFIRMED_UP",
    "MTYPE_CONFIRMED_DOWN",
    "CID_LINK_ADR",
    "MacParseError",
    "MacRangeError",
    "MacFrame",
    "DeviceSession",
    "VerifiedFrame",
    "LinkAdrCommand",
    "aes128_encrypt_block",
    "aes_cmac",
    "compute_mic",
    "encrypt_payload",
    "decrypt_payload",
    "build_uplink",
    "build_downlink",
    "parse_frame",
    "parse_and_verify",
    "encode_link_adr",
    "parse_mac_commands",
]

UPLINK = 0
DOWNLINK = 1

MTYPE_UNCONFIRMED_UP = 2
MTYPE_UNCONFIRMED_DOWN = 3
MTYPE_CONFIRMED_UP = 4
MTYPE_CONFIRMED_DOWN = 5
_UP_MTYPES = (MTYPE_UNCONFIRMED_UP, MTYPE_CONFIRMED_UP)
_DOWN_MTYPES = (MTYPE_UNCONFIRMED_DOWN, MTYPE_CONFIRMED_DOWN)

MIN_FRAME_LEN = 12  # MHDR + FHDR(7) + MIC(4)

CID_LINK_ADR = 0x03


class MacParseError(ValueError):
    """Structurally invalid MAC frame or command block."""


class MacRangeError(ValueError):
    """Payload or parameter outside its legal range."""


@dataclass
class MacFrame:
    mhdr: int
    dev_addr: int
    fctrl: int
    fcnt: int
    fopts: bytes = b""
    fport: Optional[int] = None
    frm_payload: bytes = b""
    mic: bytes = b"\x00" * 4

    @property
    def mtype(self) -> int:
        return self.mhdr >> 5

    @property
    def major(self) -> int:
        return self.mhdr & 0x3

    @property
    def direction(self) -> int:
        if self.mtype in _UP_MTYPES:
            return UPLINK
        if self.mtype in _DOWN_MTYPES:
            return DOWNLINK
        raise MacParseError(f"mtype {self.mtype} is not a data frame")

    @property
    def adr(self) -> bool:
        return bool(self.fctrl & 0x80)

    @property
    def ack(self) -> bool:
        return bool(self.fctrl & 0x20)

    @property
    def fopts_len(self) -> int:
        return self.fctrl & 0x0F

    def to_bytes(self) -> bytes:
        return self._mic_input() + self.mic

    def _mic_input(self) -> bytes:
        head = struct.pack("<BIBH", self.mhdr, self.dev_addr, self.fctrl, self.fcnt)
        body = self.fopts
        if self.fport is not None:
            body += bytes([self.fport]) + self.frm_payload
        return head + body


@dataclass
class DeviceSession:
    """ABP session state; the counter is a single-writer per side."""

    dev_addr: int
    nwk_skey: bytes
    app_skey: bytes
    fcnt_up: int = 0
    fcnt_down: int = 0
    device_class: str = "A"

    def __post_init__(self):
        if len(self.nwk_skey) != 16 or len(self.app_skey) != 16:
            raise MacRangeError("session keys must be exactly 128 bits")
        if self.device_class not in ("A", "B", "C"):
            raise MacRangeError(f"device class {self.device_class!r} not in A/B/C")


@dataclass
class VerifiedFrame:
    frame: MacFrame
    mic_ok: bool
    fcnt_ok: bool
    fcnt32: int


@dataclass(frozen=True)
class LinkAdrCommand:
    sf: int
    tx_power_dbm: int


# ---------------------------------------------------------------------------
# AES primitives (cryptography backend; behavior pinned by test vectors)
# ---------------------------------------------------------------------------


def aes128_encrypt_block(key: bytes, block: bytes) -> bytes:
    enc = Cipher(algorithms.AES(key), modes.ECB()).encryptor()
    return enc.update(block) + enc.finalize()


def aes_cmac(key: bytes, message: bytes) -> bytes:
    mac = cmac.CMAC(algorithms.AES(key))
    mac.update(message)
    return mac.finalize()


def _block0(direction: int, dev_addr: int, fcnt32: int, msg_len: int) -> bytes:
    return struct.pack("<BIBIIBB", 0x49, 0, direction, dev_addr, fcnt32 & 0xFFFFFFFF, 0, msg_len)


def compute_mic(nwk_skey: bytes, frame_bytes_without_mic: bytes, direction: int,
                dev_addr: int, fcnt32: int) -> bytes:
    """4-byte MIC: AES-CMAC over B0 || MHDR..FRMPayload."""
    b0 = _block0(direction, dev_addr, fcnt32, len(frame_bytes_without_mic))
    return aes_cmac(nwk_skey, b0 + frame_bytes_without_mic)[:4]


def _keystream(key: bytes, direction: int, dev_addr: int, fcnt32: int, nbytes: int) -> bytes:
    out = bytearray()
    for i in range(1, (nbytes + 15) // 16 + 1):
        a_i = struct.pack("<BIBIIBB", 0x01, 0, direction, dev_addr, fcnt32 & 0xFFFFFFFF, 0, i)
        out.extend(aes128_encrypt_block(key, a_i))
    return bytes(out[:nbytes])


def encrypt_payload(session: DeviceSession, direction: int, fcnt: int,
                    payload: bytes, fport: int = 1) -> bytes:
    """Counter-block XOR; decrypt is the same operation."""
    key = session.nwk_skey if fport == 0 else session.app_skey
    ks = _keystream(key, direction, session.dev_addr, fcnt, len(payload))
    return bytes(a ^ b for a, b in zip(payload, ks))


decrypt_payload = encrypt_payload


# ---------------------------------------------------------------------------
# frame build / parse / verify
# ---------------------------------------------------------------------------


def _build(session: DeviceSession, mtype: int, direction: int, fcnt32: int,
           fport: Optional[int], payload: bytes, fopts: bytes,
           adr: bool, ack: bool) -> bytes:
    if len(fopts) > 15:
        raise MacRangeError(f"fopts of {len(fopts)} octets exceed 15")
    if payload and fport is None:
        raise MacRangeError("non-empty payload requires an fport")
    fctrl = (0x80 if adr else 0) | (0x20 if ack else 0) | len(fopts)
    frame = MacFrame(
        mhdr=mtype << 5,
        dev_addr=session.dev_addr,
        fctrl=fctrl,
        fcnt=fcnt32 & 0xFFFF,
        fopts=fopts,
        fport=fport if payload else None,
        frm_payload=encrypt_payload(session, direction, fcnt32, payload, fport or 0)
        if payload
        else b"",
    )
    frame.mic = compute_mic(session.nwk_skey, frame._mic_input(), direction,
                            session.dev_addr, fcnt32)
    return frame.to_bytes()


def build_uplink(session: DeviceSession, fport: Optional[int], app_payload: bytes,
                 sf: Optional[int] = None, confirmed: bool = False,
                 fopts: bytes = b"", adr: bool = False, ack: bool = False) -> bytes:
    """Build an uplink data frame and advance the uplink counter."""
    if sf is not None:
        cap = load_constants().max_app_payload(sf)
        if len(app_payload) > cap:
            raise MacRangeError(f"payload of {len(app_payload)} octets exceeds {cap} at sf{sf}")
    mtype = MTYPE_CONFIRMED_UP if confirmed else MTYPE_UNCONFIRMED_UP
    out = _build(session, mtype, UPLINK, session.fcnt_up, fport, app_payload,
                 fopts, adr, ack)
    session.fcnt_up += 1
    return out


def build_downlink(session: DeviceSession, fport: Optional[int], payload: bytes,
                   confirmed: bool = False, fopts: bytes = b"",
                   adr: bool = False, ack: bool = False) -> bytes:
    """Mirror of :func:`build_uplink` on the downlink counter and direction."""
    mtype = MTYPE_CONFIRMED_DOWN if confirmed else MTYPE_UNCONFIRMED_DOWN
    out = _build(session, mtype, DOWNLINK, session.fcnt_down, fport, payload,
                 fopts, adr, ack)
    session.fcnt_down += 1
    return out


def parse_frame(data: bytes) -> MacFrame:
    """Structural parse; no keys involved."""
    if len(data) < MIN_FRAME_LEN:
        raise MacParseError(f"frame of {len(data)} octets shorter than {MIN_FRAME_LEN}")
    mhdr, dev_addr, fctrl, fcnt = struct.unpack("<BIBH", data[:8])
    mtype = mhdr >> 5
    if mtype not in _UP_MTYPES + _DOWN_MTYPES:
        raise MacParseError(f"mtype {mtype} is not a data frame")
    fopts_len = fctrl & 0x0F
    body, mic = data[8:-4], data[-4:]
    if len(body) < fopts_len:
        raise MacParseError("fopts length exceeds the frame body")
    fopts = body[:fopts_len]
    rest = body[fopts_len:]
    if len(rest) == 1:
        raise MacParseError("fport present with an empty payload")
    fport = rest[0] if rest else None
    frm_payload = bytes(rest[1:]) if rest else b""
    return MacFrame(mhdr, dev_addr, fctrl, fcnt, bytes(fopts), fport, frm_payload, bytes(mic))


def _fcnt32_candidate(expected: int, wire_fcnt: int) -> tuple[int, bool]:
    window = load_constants().fcnt_replay_window
    diff = (wire_fcnt - (expected & 0xFFFF)) & 0xFFFF
    return expected + diff, diff <= window


def parse_and_verify(data: bytes, session: DeviceSession,
                     expected_fcnt: Optional[int] = None) -> VerifiedFrame:
    """Parse, recompute the MIC, and replay-check the counter.

    ``expected_fcnt`` defaults to the session counter for the frame's
    direction. Counters are not advanced here; accept explicitly after a
    positive verdict.
    """
    frame = parse_frame(data)
    direction = frame.direction
    if expected_fcnt is None:
        expected_fcnt = session.fcnt_up if direction == UPLINK else session.fcnt_down
    fcnt32, fcnt_ok = _fcnt32_candidate(expected_fcnt, frame.fcnt)
    mic = compute_mic(session.nwk_skey, data[:-4], direction, frame.dev_addr, fcnt32)
    return VerifiedFrame(frame, mic == frame.mic, fcnt_ok, fcnt32)


# ---------------------------------------------------------------------------
# MAC commands (fopts)
# ---------------------------------------------------------------------------


def encode_link_adr(sf: int, tx_power_dbm: int) -> bytes:
    """LinkADR-style command: set the device's sf and transmit power."""
    registry = load_constants()
    if sf not in registry.spreading_factors:
        raise MacRangeError(f"sf {sf} outside 7..12")
    if not registry.tx_power_min_dbm <= tx_power_dbm <= registry.tx_power_max_dbm:
        raise MacRangeError(f"tx power {tx_power_dbm} dBm outside 2..20")
    return bytes([CID_LINK_ADR, sf, tx_power_dbm])


def parse_mac_commands(fopts: bytes) -> list[LinkAdrCommand]:
    out = []
    pos = 0
    while pos < len(fopts):
        cid = fopts[pos]
        if cid == CID_LINK_ADR:
            if pos + 3 > len(fopts):
                raise MacParseError("truncated LinkADR command")
            out.append(LinkAdrCommand(fopts[pos + 1], fopts[pos + 2]))
            pos += 3
        else:
            raise MacParseError(f"unknown MAC command cid {cid:#04x}")
    return out
