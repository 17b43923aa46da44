"""LoRa chirp-spread-spectrum PHY numerics.

Symbol-level chirp modulation/demodulation plus the full bit-level
TX/RX chains (whitening, Hamming FEC, diagonal interleaving, Gray
mapping, CRC-16) shared by end devices, radio units, and distributed
units. Everything here is a pure function over value inputs.

Frame layout produced by :func:`phy_assemble` (documented in
docs/wire_formats.md):

* ``preamble_len`` base upchirps (symbol value 0),
* one header block: 8 symbols, coding rate 4/8, reduced symbol width
  ``sf - 2`` bits, carrying a 5-nibble header (payload length, coding
  rate, CRC flag, checksum) plus the first payload-stream nibbles,
* payload blocks: ``4 + cr`` symbols each, symbol width ``sf - 2*DE``
  bits where DE is the low-data-rate-optimization flag.

The payload stream is ``whiten(payload || crc16)`` split into nibbles,
high nibble first. This framing makes the emitted symbol count agree
exactly with the conventional airtime formula (see ``netsim.airtime``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np

__all__ = [
    "PhyParams",
    "IQBuffer",
    "RecoveredPayload",
    "PreambleDetection",
    "PhyRangeError",
    "PhyShapeError",
    "FecDecodeError",
    "PhyIntegrityError",
    "chirp_modulate",
    "chirp_demodulate",
    "modulate_block",
    "demodulate_stream",
    "whiten",
    "pn9_keystream",
    "gray_encode",
    "gray_decode",
    "fec_encode",
    "fec_decode",
    "interleave",
    "deinterleave",
    "crc16",
    "phy_assemble",
    "phy_recover",
    "payload_symbol_count",
    "preamble_detect",
    "estimate_link_metrics",
]

VALID_SF = (7, 8, 9, 10, 11, 12)
VALID_BW = (125000, 250000, 500000)
VALID_CR = (1, 2, 3, 4)

# Symbol time at or above which low-data-rate optimization kicks in.
LDRO_THRESHOLD_S = 0.016384

HEADER_NIBBLES = 5
HEADER_CR = 4
_METRIC_EPS = 1e-12


class PhyRangeError(ValueError):
    """Input value outside its legal range."""


class PhyShapeError(ValueError):
    """Buffer or matrix has the wrong dimensions."""


class FecDecodeError(ValueError):
    """Uncorrectable codeword; carries the best-effort nibble."""

    def __init__(self, message: str, nibble: int):
        super().__init__(message)
        self.nibble = nibble


class PhyIntegrityError(ValueError):
    """Frame failed FEC or header integrity; carries diagnostic counts."""

    def __init__(self, message: str, corrected: int = 0, detected: int = 0):
        super().__init__(message)
        self.corrected = corrected
        self.detected = detected


@dataclass(frozen=True)
class PhyParams:
    """Radio parameters of one LoRa transmission."""

    sf: int
    bw_hz: int = 125000
    cr: int = 1
    preamble_len: int = 8
    crc_on: bool = True
    ldro: bool | None = None  # None = automatic by symbol time

    def __post_init__(self):
        if self.sf not in VALID_SF:
            raise PhyRangeError(f"sf must be one of {VALID_SF}, got {self.sf}")
        if self.bw_hz not in VALID_BW:
            raise PhyRangeError(f"bw_hz must be one of {VALID_BW}, got {self.bw_hz}")
        if self.cr not in VALID_CR:
            raise PhyRangeError(f"cr must be in 1..4, got {self.cr}")
        if self.preamble_len < 2:
            raise PhyRangeError("preamble_len must be >= 2")

    @property
    def n_chips(self) -> int:
        return 1 << self.sf

    @property
    def symbol_time_s(self) -> float:
        return self.n_chips / self.bw_hz

    @property
    def ldro_active(self) -> bool:
        if self.ldro is not None:
            return self.ldro
        return self.symbol_time_s >= LDRO_THRESHOLD_S


@dataclass
class IQBuffer:
    """Complex baseband samples at one sample per chip."""

    samples: np.ndarray
    sample_rate_hz: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.complex128)

    def __len__(self) -> int:
        return len(self.samples)


@dataclass
class RecoveredPayload:
    payload: bytes
    crc_present: bool
    crc_ok: bool
    corrected: int = 0  # codewords fixed by FEC
    detected: int = 0  # codewords flagged (detect-only rates)


@dataclass
class PreambleDetection:
    found: bool
    offset: int = 0
    cfo_bins: int = 0
    peak_metric: float = 0.0


# ---------------------------------------------------------------------------
# chirp modulation / demodulation
# ---------------------------------------------------------------------------


@lru_cache(maxsize=None)
def _base_chirp(sf: int) -> np.ndarray:
    n = np.arange(1 << sf)
    return np.exp(2j * np.pi * (n * n) / (2 << sf))


def chirp_modulate(s: int, p: PhyParams) -> IQBuffer:
    """Modulate one symbol value onto a cyclically shifted upchirp.

    Sample ``n`` has phase ``2*pi*n*(s/2^sf + n/(2*2^sf))``, unit magnitude,
    sampled at exactly the channel bandwidth (one sample per chip).
    """
    n_chips = p.n_chips
    if not 0 <= s < n_chips:
        raise PhyRangeError(f"symbol {s} out of range for sf{p.sf}")
    n = np.arange(n_chips)
    samples = np.exp(2j * np.pi * n * (s / n_chips + n / (2 * n_chips)))
    return IQBuffer(samples, p.bw_hz)


def _dechirp_fft(samples: np.ndarray, sf: int) -> np.ndarray:
    return np.fft.fft(samples * np.conj(_base_chirp(sf)))


def _peak_and_metric(spectrum: np.ndarray) -> tuple[int, float]:
    mags = np.abs(spectrum)
    peak = int(np.argmax(mags))
    others = np.delete(mags, peak)
    metric = (mags[peak] + _METRIC_EPS) / (float(np.mean(others)) + _METRIC_EPS)
    return peak, metric


def chirp_demodulate(iq: IQBuffer, p: PhyParams) -> tuple[int, float]:
    """Dechirp + DFT one symbol; returns (argmax bin, peak-to-mean metric)."""
    if len(iq) != p.n_chips:
        raise PhyShapeError(f"expected {p.n_chips} samples, got {len(iq)}")
    peak, metric = _peak_and_metric(_dechirp_fft(iq.samples, p.sf))
    return peak, metric


def modulate_block(symbols: Sequence[int], p: PhyParams) -> IQBuffer:
    """Concatenate the chirps of a whole symbol block."""
    parts = [chirp_modulate(s, p).samples for s in symbols]
    return IQBuffer(np.concatenate(parts) if parts else np.zeros(0, complex), p.bw_hz)

def demodulate_stream(iq: IQBuffer, p: PhyParams, bin_correction: int = 0) -> list[tuple[int, float]]:
    """Demodulate back-to-back symbols; applies an optional common bin shift.

    A partial final window (a timing-offset slice cuts into the last
    symbol) is zero-padded to a full symbol before the DFT.
    """
    n = p.n_chips
    samples = iq.samples
    remainder = len(samples) % n
    if remainder:
        samples = np.concatenate([samples, np.zeros(n - remainder, complex)])
    out = []
    for k in range(len(samples) // n):
        spectrum = _dechirp_fft(samples[k * n : (k + 1) * n], p.sf)
        peak, metric = _peak_and_metric(spectrum)
        out.append(((peak - bin_correction) % n, metric))
    return out


# ---------------------------------------------------------------------------
# whitening
# ---------------------------------------------------------------------------


@lru_cache(maxsize=8)
def _pn9_prefix(nbytes: int) -> bytes:
    # Fibonacci LFSR, x^9 + x^5 + 1, seed all ones. Output bit is the LSB of
    # the state; feedback = bit0 ^ bit5; keystream octets fill MSB first.
    state = 0x1FF
    out = bytearray()
    for _ in range(nbytes):
        octet = 0
        for _ in range(8):
            bit = state & 1
            octet = (octet << 1) | bit
            fb = bit ^ ((state >> 5) & 1)
            state = (state >> 1) | (fb << 8)
        out.append(octet)
    return bytes(out)


def pn9_keystream(nbytes: int) -> bytes:
    """First ``nbytes`` octets of the PN9 whitening sequence."""
    if nbytes <= 512:
        return _pn9_prefix(512)[:nbytes]
    return _pn9_prefix(nbytes)


def whiten(data: bytes) -> bytes:
    """XOR with the PN9 keystream; an involution."""
    ks = pn9_keystream(len(data))
    return bytes(a ^ b for a, b in zip(data, ks))


# ---------------------------------------------------------------------------
# Gray mapping
# ---------------------------------------------------------------------------


def gray_encode(v: int) -> int:
    return v ^ (v >> 1)


def gray_decode(g: int) -> int:
    v = g
    shift = 1
    while (g >> shift) > 0:
        v ^= g >> shift
        shift += 1
    return v


# ---------------------------------------------------------------------------
# FEC: parity / Hamming(7,4) / Hamming(8,4)
# ---------------------------------------------------------------------------

# Data bits d1..d4 are the nibble MSB..LSB. Codeword bit order (MSB first):
# [d1 d2 d3 d4 p1 .. p_cr]. Parity equations follow Hamming(7,4):
#   p1 = d1^d2^d4, p2 = d1^d3^d4, p3 = d2^d3^d4, p4 = overall even parity.
# cr=1 uses overall parity alone; cr=2 uses p1,p2 (detect-only rates).

_SYNDROME_BIT = {
    (1, 1, 0): 0,  # d1
    (1, 0, 1): 1,  # d2
    (0, 1, 1): 2,  # d3
    (1, 1, 1): 3,  # d4
    (1, 0, 0): 4,  # p1
    (0, 1, 0): 5,  # p2
    (0, 0, 1): 6,  # p3
}


def _nibble_bits(nibble: int) -> tuple[int, int, int, int]:
    return ((nibble >> 3) & 1, (nibble >> 2) & 1, (nibble >> 1) & 1, nibble & 1)


def fec_encode(nibble: int, cr: int) -> int:
    """Encode a 4-bit value into a (4+cr)-bit codeword."""
    if not 0 <= nibble < 16:
        raise PhyRangeError(f"nibble {nibble} out of range")
    if cr not in VALID_CR:
        raise PhyRangeError(f"cr {cr} out of range")
    d1, d2, d3, d4 = _nibble_bits(nibble)
    p1 = d1 ^ d2 ^ d4
    p2 = d1 ^ d3 ^ d4
    p3 = d2 ^ d3 ^ d4
    if cr == 1:
        parity = (d1 ^ d2 ^ d3 ^ d4,)
    elif cr == 2:
        parity = (p1, p2)
    elif cr == 3:
        parity = (p1, p2, p3)
    else:
        p4 = d1 ^ d2 ^ d3 ^ d4 ^ p1 ^ p2 ^ p3
        parity = (p1, p2, p3, p4)
    word = nibble
    for bit in parity:
        word = (word << 1) | bit
    return word


def fec_decode(codeword: int, cr: int) -> tuple[int, bool]:
    """Decode a (4+cr)-bit codeword.

    Returns ``(nibble, corrected)`` where ``corrected`` is True when a
    correction (cr 3/4) or a detection (cr 1/2) fired. Raises
    :class:`FecDecodeError` for patterns known to be uncorrectable.
    """
    if cr not in VALID_CR:
        raise PhyRangeError(f"cr {cr} out of range")
    width = 4 + cr
    if not 0 <= codeword < (1 << width):
        raise PhyRangeError(f"codeword {codeword:#x} does not fit {width} bits")
    nibble = (codeword >> cr) & 0xF
    if cr in (1, 2):
        clean = fec_encode(nibble, cr)
        return nibble, clean != codeword
    bits = [(codeword >> (width - 1 - i)) & 1 for i in range(width)]
    d1, d2, d3, d4, p1, p2, p3 = bits[:7]
    syndrome = (p1 ^ d1 ^ d2 ^ d4, p2 ^ d1 ^ d3 ^ d4, p3 ^ d2 ^ d3 ^ d4)
    if cr == 3:
        if syndrome == (0, 0, 0):
            return nibble, False
        bits[_SYNDROME_BIT[syndrome]] ^= 1
        d = (bits[0] << 3) | (bits[1] << 2) | (bits[2] << 1) | bits[3]
        return d, True
    overall = 0
    for b in bits:
        overall ^= b
    if syndrome == (0, 0, 0):
        if overall == 0:
            return nibble, False
        return nibble, True  # extension parity bit itself flipped
    if overall == 1:
        bits[_SYNDROME_BIT[syndrome]] ^= 1
        d = (bits[0] << 3) | (bits[1] << 2) | (bits[2] << 1) | bits[3]
        return d, True
    raise FecDecodeError("double-bit error in Hamming(8,4) codeword", nibble)


# ---------------------------------------------------------------------------
# interleaving
# ---------------------------------------------------------------------------


def _interleave_rows(block: Sequence[Sequence[int]], nrows: int, ncols: int):
    return tuple(
        tuple(block[(i + j) % nrows][j] for j in range(ncols)) for i in range(nrows)
    )


def _deinterleave_rows(matrix: Sequence[Sequence[int]], nrows: int, ncols: int):
    out = [[0] * ncols for _ in range(nrows)]
    for i in range(nrows):
        for j in range(ncols):
            out[(i + j) % nrows][j] = matrix[i][j]
    return tuple(tuple(row) for row in out)


def _check_dims(block, nrows: int, ncols: int, what: str):
    if len(block) != nrows or any(len(row) != ncols for row in block):
        raise PhyShapeError(f"{what} must be {nrows}x{ncols}")


def interleave(block: Sequence[Sequence[int]], p: PhyParams):
    """Diagonal block interleaver: out[i][j] = in[(i+j) mod sf][j].

    ``block`` is an sf x (4+cr) bit matrix, one codeword per row.
    """
    ncols = 4 + p.cr
    _check_dims(block, p.sf, ncols, "interleaver block")
    return _interleave_rows(block, p.sf, ncols)


def deinterleave(matrix: Sequence[Sequence[int]], p: PhyParams):
    """Exact inverse of :func:`interleave`."""
    ncols = 4 + p.cr
    _check_dims(matrix, p.sf, ncols, "deinterleaver matrix")
    return _deinterleave_rows(matrix, p.sf, ncols)


# ---------------------------------------------------------------------------
# CRC-16/CCITT-FALSE
# ---------------------------------------------------------------------------


def crc16(payload: bytes) -> int:
    """CRC-16/CCITT-FALSE: poly 0x1021, init 0xFFFF, no reflection, no xorout."""
    crc = 0xFFFF
    for byte in payload:
        crc ^= byte << 8
        for _ in range(8):
            crc = ((crc << 1) ^ 0x1021 if crc & 0x8000 else crc << 1) & 0xFFFF
    return crc


# ---------------------------------------------------------------------------
# block symbol coding helpers
# ---------------------------------------------------------------------------


def _codeword_bits(word: int, width: int) -> tuple[int, ...]:
    return tuple((word >> (width - 1 - i)) & 1 for i in range(width))


def _encode_block(nibbles: Sequence[int], cr: int, ppm: int, sf: int) -> list[int]:
    """FEC-encode + interleave + Gray-map one block of ``ppm`` nibbles."""
    width = 4 + cr
    rows = [_codeword_bits(fec_encode(nib, cr), width) for nib in nibbles]
    matrix = _interleave_rows(rows, ppm, width)
    shift = sf - ppm
    symbols = []
    for j in range(width):
        value = 0
        for i in range(ppm):
            value = (value << 1) | matrix[i][j]
        symbols.append(gray_encode(value) << shift)
    return symbols


def _decode_block(symbols: Sequence[int], cr: int, ppm: int, sf: int):
    """Inverse of :func:`_encode_block`.

    Returns (nibbles, corrected count, detected count); raises
    :class:`FecDecodeError` on an uncorrectable codeword.
    """
    width = 4 + cr
    shift = sf - ppm
    half = (1 << shift) >> 1  # round ties toward the next reduced step
    matrix = []
    for s in symbols:
        raw = ((s + half) >> shift) & ((1 << ppm) - 1) if shift else s
        value = gray_decode(raw)
        matrix.append(tuple((value >> (ppm - 1 - i)) & 1 for i in range(ppm)))
    # matrix is per-symbol (column-major); rebuild the row-major bit matrix
    grid = tuple(tuple(matrix[j][i] for j in range(width)) for i in range(ppm))
    rows = _deinterleave_rows(grid, ppm, width)
    nibbles = []
    corrected = detected = 0
    for row in rows:
        word = 0
        for bit in row:
            word = (word << 1) | bit
        nib, fired = fec_decode(word, cr)
        if fired:
            if cr >= 3:
                corrected += 1
            else:
                detected += 1
        nibbles.append(nib)
    return nibbles, corrected, detected


def _octets_to_nibbles(data: bytes) -> list[int]:
    out = []
    for byte in data:
        out.append(byte >> 4)
        out.append(byte & 0xF)
    return out


def _nibbles_to_octets(nibbles: Sequence[int]) -> bytes:
    return bytes((nibbles[i] << 4) | nibbles[i + 1] for i in range(0, len(nibbles), 2))


def _header_nibbles(length: int, cr: int, crc_on: bool) -> list[int]:
    cfg = (cr << 1) | int(crc_on)
    checksum = crc16(bytes([length, cfg])) & 0xFF
    return [length >> 4, length & 0xF, cfg, checksum >> 4, checksum & 0xF]


def payload_symbol_count(p: PhyParams, payload_len: int) -> int:
    """Number of data symbols (header block + payload blocks) for a frame."""
    stream_nibbles = 2 * payload_len + (4 if p.crc_on else 0)
    ppm = p.sf - (2 if p.ldro_active else 0)
    overflow = stream_nibbles - (p.sf - 7)
    blocks = max(math.ceil(overflow / ppm), 0)
    return 8 + blocks * (4 + p.cr)


def phy_assemble(payload: bytes, p: PhyParams) -> list[int]:
    """Run the TX chain; returns the symbol block with preamble prepended."""
    if not 1 <= len(payload) <= 255:
        raise PhyRangeError(f"payload length {len(payload)} outside 1..255")
    stream = bytes(payload)
    if p.crc_on:
        c = crc16(stream)
        stream += bytes([c >> 8, c & 0xFF])
    nibbles = _octets_to_nibbles(whiten(stream))

    header_ppm = p.sf - 2
    first = _header_nibbles(len(payload), p.cr, p.crc_on) + nibbles[: p.sf - 7]
    first += [0] * (header_ppm - len(first))
    symbols = _encode_block(first, HEADER_CR, header_ppm, p.sf)

    rest = nibbles[p.sf - 7 :]
    ppm = p.sf - (2 if p.ldro_active else 0)
    for start in range(0, len(rest), ppm):
        chunk = rest[start : start + ppm]
        chunk = chunk + [0] * (ppm - len(chunk))
        symbols.extend(_encode_block(chunk, p.cr, ppm, p.sf))
    return [0] * p.preamble_len + symbols


def phy_recover(symbols: Sequence[int], p: PhyParams) -> RecoveredPayload:
    """Run the RX chain over a demodulated symbol block (preamble included)."""
    data = list(symbols[p.preamble_len :])
    if len(data) < 8:
        raise PhyShapeError("symbol block shorter than the 8-symbol header block")
    header_ppm = p.sf - 2
    try:
        first, corrected, detected = _decode_block(data[:8], HEADER_CR, header_ppm, p.sf)
    except FecDecodeError as exc:
        raise PhyIntegrityError(f"uncorrectable PHY header block: {exc}") from exc
    length = (first[0] << 4) | first[1]
    cfg = first[2]
    cr = cfg >> 1
    crc_on = bool(cfg & 1)
    checksum = (first[3] << 4) | first[4]
    if (crc16(bytes([length, cfg])) & 0xFF) != checksum:
        raise PhyIntegrityError("PHY header checksum mismatch", corrected, detected)
    if cr not in VALID_CR or length < 1:
        raise PhyIntegrityError(f"PHY header invalid (len={length}, cr={cr})", corrected, detected)

    stream_nibbles = 2 * length + (4 if crc_on else 0)
    nibbles = first[HEADER_NIBBLES:][:stream_nibbles]
    remaining = stream_nibbles - len(nibbles)
    ppm = p.sf - (2 if p.ldro_active else 0)
    nblocks = max(math.ceil(remaining / ppm), 0)
    need = 8 + nblocks * (4 + cr)
    if len(data) < need:
        raise PhyShapeError(f"expected at least {need} data symbols, got {len(data)}")
    for b in range(nblocks):
        chunk = data[8 + b * (4 + cr) : 8 + (b + 1) * (4 + cr)]
        try:
            nibs, cor, det = _decode_block(chunk, cr, ppm, p.sf)
        except FecDecodeError as exc:
            raise PhyIntegrityError(
                f"uncorrectable FEC block {b}: {exc}", corrected, detected
            ) from exc
        corrected += cor
        detected += det
        nibbles.extend(nibs)

    stream = whiten(_nibbles_to_octets(nibbles[:stream_nibbles]))
    payload = stream[:length]
    crc_ok = True
    if crc_on:
        stored = (stream[length] << 8) | stream[length + 1]
        crc_ok = crc16(payload) == stored
    return RecoveredPayload(payload, crc_on, crc_ok, corrected, detected)


# ---------------------------------------------------------------------------
# synchronization and link metrics
# ---------------------------------------------------------------------------


def preamble_detect(iq: IQBuffer, p: PhyParams, min_metric: float = 3.0) -> PreambleDetection:
    """Locate a preamble of repeated base upchirps.

    The start offset comes from the power edge (the preamble itself is
    periodic, so only the leading edge carries absolute timing); the common
    DFT bin of the first preamble windows gives the integer carrier offset.
    Detection requires a stable argmax bin across consecutive windows plus a
    minimum peak metric.
    """
    n = p.n_chips
    samples = iq.samples
    if len(samples) < 2 * n:
        return PreambleDetection(False)
    power = np.abs(samples) ** 2
    window_means = np.convolve(power, np.ones(n) / n, mode="valid")
    level = float(np.max(window_means))
    if level <= 0:
        return PreambleDetection(False)
    above = np.nonzero(power > level / 2)[0]
    if len(above) == 0:
        return PreambleDetection(False)
    offset = int(above[0])

    nwin = min(p.preamble_len, (len(samples) - offset) // n)
    if nwin < 2:
        return PreambleDetection(False)
    bins, metrics = [], []
    for k in range(min(nwin, 4)):
        seg = samples[offset + k * n : offset + (k + 1) * n]
        peak, metric = _peak_and_metric(_dechirp_fft(seg, p.sf))
        bins.append(peak)
        metrics.append(metric)
    stable = len(set(bins)) == 1
    mean_metric = float(np.mean(metrics))
    if not stable or mean_metric < min_metric:
        return PreambleDetection(False, offset, 0, mean_metric)
    cfo = bins[0] if bins[0] <= n // 2 else bins[0] - n
    return PreambleDetection(True, offset, cfo, mean_metric)


def estimate_link_metrics(iq: IQBuffer, noise_floor_dbm: float) -> tuple[float, float]:
    """(rssi_dbm, snr_db) from mean sample power; 0 dBm == unit mean power."""
    if len(iq) == 0:
        raise PhyShapeError("empty IQ buffer")
    mean_power = float(np.mean(np.abs(iq.samples) ** 2))
    rssi = 10.0 * math.log10(max(mean_power, 1e-30))
    return rssi, rssi - noise_floor_dbm
