"""Radio channel arithmetic: airtime, log-distance path loss, collisions.

The airtime expression is the conventional LoRa symbol-count formula and
agrees exactly with the framing produced by ``phy.phy_assemble`` (the
round trip is asserted in the test suite). Collisions follow a 6 dB
same-sf capture rule and a frozen cross-sf rejection table.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from ..constants import ConstantsRegistry, load_constants
from ..phy import PhyParams, payload_symbol_count

__all__ = [
    "ChannelParams",
    "CollisionEntry",
    "airtime",
    "path_loss_db",
    "noise_floor_dbm",
    "link_snr_db",
    "collision_resolve",
]


@dataclass(frozen=True)
class ChannelParams:
    path_loss_exponent: float = 2.7
    reference_loss_db: float = 74.0
    reference_distance_m: float = 1.0
    noise_figure_db: float = 6.0
    awgn_enabled: bool = True


def airtime(p: PhyParams, payload_len: int) -> float:
    """Frame airtime in seconds: T_sym * (preamble + 4.25 + data symbols)."""
    if payload_len > 255:
        raise ValueError(f"payload length {payload_len} exceeds 255")
    return p.symbol_time_s * (p.preamble_len + 4.25 + payload_symbol_count(p, payload_len))


def path_loss_db(d_m: float, ch: ChannelParams = ChannelParams()) -> float:
    """Log-distance path loss: PL0 + 10*n*log10(d/d0)."""
    if d_m <= 0:
        raise ValueError(f"distance {d_m} m must be positive")
    return ch.reference_loss_db + 10.0 * ch.path_loss_exponent * math.log10(
        d_m / ch.reference_distance_m
    )


def noise_floor_dbm(bw_hz: int, noise_figure_db: float,
                    thermal_dbm_hz: float = -174.0) -> float:
    return thermal_dbm_hz + 10.0 * math.log10(bw_hz) + noise_figure_db


def link_snr_db(tx_dbm: float, d_m: float, bw_hz: int,
                ch: ChannelParams = ChannelParams()) -> float:
    return tx_dbm - path_loss_db(d_m, ch) - noise_floor_dbm(bw_hz, ch.noise_figure_db)


@dataclass(frozen=True)
class CollisionEntry:
    key: object
    sf: int
    rx_power_dbm: float


def collision_resolve(
    entries: list[CollisionEntry], registry: ConstantsRegistry | None = None
) -> dict:
    """Per-transmission survival among co-channel overlapping transmissions.

    Same sf: a transmission survives only when it exceeds every same-sf
    overlapper by at least the capture threshold. Different sf:
    quasi-orthogonal; the desired transmission is lost only when an
    interferer's power advantage exceeds the cross-sf rejection entry.
    """
    if len(entries) < 2:
        raise ValueError("collision resolution needs at least two overlapping entries")
    reg = registry or load_constants()
    capture = reg.capture_threshold_db
    outcome = {}
    for e in entries:
        survived = True
        for other in entries:
            if other is e:
                continue
            margin = e.rx_power_dbm - other.rx_power_dbm
            if other.sf == e.sf:
                if margin < capture:
                    survived = False
                    break
            else:
                if -margin > reg.cross_sf_rejection_db(e.sf, other.sf):
                    survived = False
                    break
        outcome[e.key] = survived
    return outcome
