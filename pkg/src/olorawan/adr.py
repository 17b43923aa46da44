"""Margin-based adaptive-data-rate rule shared by the DU, NS, and RIC.

One implementation reading one constants registry, so the three callers
produce identical proposals on identical history by construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

from .constants import ConstantsRegistry, load_constants

__all__ = ["AdrProposal", "propose_adr", "terminal_state"]


@dataclass(frozen=True)
class AdrProposal:
    sf: int
    tx_power_dbm: int


def propose_adr(
    snr_history_db: Sequence[float],
    current_sf: int,
    current_power_dbm: int,
    registry: ConstantsRegistry | None = None,
    sf_bounds: tuple[int, int] | None = None,
) -> Optional[AdrProposal]:
    """Propose a new (sf, power) from observed SNR, or None for no change.

    margin = max(history) - required_snr(sf) - adr_margin. Each full
    step (3 dB) of positive margin lowers sf by one until sf 7, then
    lowers power by 2 dBm until the floor; negative margin raises power
    first, then sf. ``sf_bounds`` (an SF_BOUNDS policy) clamps the final
    sf of the unconstrained proposal.
    """
    if not snr_history_db:
        return None
    reg = registry or load_constants()
    sf_min, sf_max = reg.spreading_factors[0], reg.spreading_factors[-1]
    p_min, p_max = reg.tx_power_min_dbm, reg.tx_power_max_dbm

    margin = max(snr_history_db) - reg.required_snr_db(current_sf) - reg.adr_margin_db
    steps = math.floor(margin / reg.adr_snr_step_db)

    sf, power = current_sf, current_power_dbm
    if steps > 0:
        down = min(steps, sf - sf_min)
        sf -= down
        steps -= down
        power = max(p_min, power - steps * reg.adr_power_step_dbm)
    elif steps < 0:
        up = min(-steps, (p_max - power) // reg.adr_power_step_dbm)
        power += up * reg.adr_power_step_dbm
        sf = min(sf_max, sf + (-steps - up))

    if sf_bounds is not None:
        lo, hi = sf_bounds
        sf = min(max(sf, lo), hi)
    if (sf, power) == (current_sf, current_power_dbm):
        return None
    return AdrProposal(sf, power)


def terminal_state(
    snr_db: float,
    start_sf: int,
    start_power_dbm: int,
    registry: ConstantsRegistry | None = None,
    sf_bounds: tuple[int, int] | None = None,
) -> AdrProposal:
    """Fixpoint of the rule under a constant observed SNR."""
    sf, power = start_sf, start_power_dbm
    for _ in range(64):
        nxt = propose_adr([snr_db], sf, power, registry, sf_bounds)
        if nxt is None:
            return AdrProposal(sf, power)
        sf, power = nxt.sf, nxt.tx_power_dbm
    raise RuntimeError("ADR rule failed to reach a fixpoint")
