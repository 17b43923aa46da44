"""xApps hosted on the near-RT RIC, and the energy-efficiency rApp.

Three xApps: spreading-factor adjustment (the shared ADR rule driven over
E2), downlink gateway steering with hysteresis, and per-device energy
forecasting. The rApp digests a whole scenario's KPI archive into an
ENERGY_SAVING policy draft.
"""

from __future__ import annotations

import re
from collections import defaultdict, deque
from dataclasses import dataclass
from typing import Iterable, Optional

from .a1 import A1Policy
from .adr import propose_adr
from .constants import ConstantsRegistry, load_constants
from .e2 import ControlCommand, KpiRecord

__all__ = [
    "Xapp",
    "SfAdjustmentXapp",
    "GatewaySteeringXapp",
    "EnergyXapp",
    "EnergyReport",
    "energy_per_uplink_mas",
    "rapp_energy_efficiency",
]

_DEV_RE = re.compile(r"/dev/([0-9a-fA-F]{8})$")


def _device_of(kpi: KpiRecord) -> Optional[int]:
    m = _DEV_RE.search(kpi.node_id)
    return int(m.group(1), 16) if m else None


class Xapp:
    """Base hook set; xApps share no mutable state with each other."""

    xapp_id = "xapp"

    def attach(self, ric) -> None:
        self.ric = ric

    def on_indication(self, kpi: KpiRecord) -> None:  # pragma: no cover - interface
        raise NotImplementedError

    def on_policy(self, event: str, policy: A1Policy) -> None:
        pass


class SfAdjustmentXapp(Xapp):
    """Fine-tunes device sf/power from observed SNR (rate-limited ADR)."""

    xapp_id = "sf_adjustment"

    def __init__(self, control_target: str, registry: ConstantsRegistry | None = None):
        self.target = control_target
        self.registry = registry or load_constants()
        self._history: dict[int, deque] = defaultdict(
            lambda: deque(maxlen=self.registry.adr_history_len)
        )
        self._uplinks: dict[int, int] = defaultdict(int)
        self._last_cmd_at: dict[int, int] = {}
        self.sf_bounds: Optional[tuple[int, int]] = None

    def on_policy(self, event: str, policy: A1Policy) -> None:
        if policy.policy_type != "SF_BOUNDS":
            return
        self.sf_bounds = (
            (policy.body["min_sf"], policy.body["max_sf"]) if event == "put" else None
        )

    def on_indication(self, kpi: KpiRecord) -> None:
        dev = _device_of(kpi)
        if dev is None or "snr_db" not in kpi.metrics:
            return
        self._history[dev].append(kpi.metrics["snr_db"])
        self._uplinks[dev] += 1
        count = self._uplinks[dev]
        rate = self.registry.sf_xapp_uplinks_per_command
        if count - self._last_cmd_at.get(dev, 0) < rate:
            return
        proposal = propose_adr(
            list(self._history[dev]),
            int(kpi.metrics.get("sf", 12)),
            int(kpi.metrics.get("tx_power_dbm", 14)),
            self.registry,
            self.sf_bounds,
        )
        if proposal is None:
            return
        self._last_cmd_at[dev] = count
        self.ric.e2_control(
            self.xapp_id,
            ControlCommand(
                target_node=self.target,
                parameter_path=f"device/{dev:08x}/link_adr",
                value={"sf": proposal.sf, "power": proposal.tx_power_dbm},
                deadline_ns=kpi.timestamp_ns + 1_000_000_000,
                caused_by_ns=kpi.timestamp_ns,
            ),
        )

    def unconstrained_then_clamped(self, dev: int, sf: int, power: int):
        """(unconstrained sf, clamped sf) for the policy-clamping property."""
        history = list(self._history[dev])
        free = propose_adr(history, sf, power, self.registry, None)
        bound = propose_adr(history, sf, power, self.registry, self.sf_bounds)
        return free, bound


class GatewaySteeringXapp(Xapp):
    """Moves a device's downlink gateway when another one is clearly better."""

    xapp_id = "gateway_steering"

    def __init__(self, control_target: str, registry: ConstantsRegistry | None = None):
        self.target = control_target
        self.registry = registry or load_constants()
        window = self.registry.steering_window
        self._snrs: dict[int, dict[str, deque]] = defaultdict(
            lambda: defaultdict(lambda: deque(maxlen=window))
        )
        self.incumbent: dict[int, str] = {}

    def on_indication(self, kpi: KpiRecord) -> None:
        dev = _device_of(kpi)
        if dev is None:
            return
        per_gw = {
            name.split(":", 1)[1]: value
            for name, value in kpi.metrics.items()
            if name.startswith("gw_snr:")
        }
        if not per_gw:
            return
        for gw, snr in per_gw.items():
            self._snrs[dev][gw].append(snr)
        if dev not in self.incumbent:
            top = max(per_gw.values())
            self.incumbent[dev] = min(g for g, s in per_gw.items() if s == top)
        if len(self._snrs[dev]) < 2:
            return  # a single gateway never triggers steering
        means = {
            gw: sum(values) / len(values) for gw, values in self._snrs[dev].items()
        }
        serving = self.incumbent[dev]
        best_mean = max(means.values())
        best = min(g for g, m in means.items() if m == best_mean)
        if best == serving:
            return
        if means[best] - means.get(serving, best_mean) >= self.registry.steering_hysteresis_db:
            self.incumbent[dev] = best
            self.ric.e2_control(
                self.xapp_id,
                ControlCommand(
                    target_node=self.target,
                    parameter_path=f"device/{dev:08x}/dl_gateway",
                    value=best,
                    deadline_ns=kpi.timestamp_ns + 1_000_000_000,
                    caused_by_ns=kpi.timestamp_ns,
                ),
            )


def energy_per_uplink_mas(airtime_s: float, tx_power_dbm: int,
                          registry: ConstantsRegistry | None = None) -> float:
    """Transmit charge per uplink in milliamp-seconds: airtime x current."""
    reg = registry or load_constants()
    return airtime_s * reg.tx_current_ma(tx_power_dbm)


@dataclass
class EnergyReport:
    dev_addr: int
    energy_per_uplink_mas: float
    drain_pct_per_s: float
    forecast_lifetime_s: float


class EnergyXapp(Xapp):
    """Forecasts battery life and trims transmit power when margin allows."""

    xapp_id = "energy"

    def __init__(self, control_target: str, registry: ConstantsRegistry | None = None):
        self.target = control_target
        self.registry = registry or load_constants()
        self._history: dict[int, deque] = defaultdict(lambda: deque(maxlen=200))
        self._last_cmd_at: dict[int, int] = {}
        self.reports: dict[int, EnergyReport] = {}

    def on_indication(self, kpi: KpiRecord) -> None:
        dev = _device_of(kpi)
        metrics = kpi.metrics
        if dev is None or "battery_pct" not in metrics or "airtime_s" not in metrics:
            return
        self._history[dev].append(
            (
                kpi.timestamp_ns,
                metrics["battery_pct"],
                metrics["airtime_s"],
                int(metrics.get("tx_power_dbm", 14)),
                int(metrics.get("sf", 12)),
                metrics.get("snr_db"),
            )
        )
        history = self._history[dev]
        if len(history) < self.registry.energy_forecast_min_history:
            return
        report = self.forecast(dev)
        self.reports[dev] = report
        if report.forecast_lifetime_s >= self.registry.energy_lifetime_threshold_s:
            return
        count = len(history)
        if count - self._last_cmd_at.get(dev, 0) < self.registry.sf_xapp_uplinks_per_command:
            return
        ts, _, _, power, sf, snr = history[-1]
        if snr is None:
            return
        margin = (
            snr - self.registry.required_snr_db(sf) - self.registry.adr_margin_db
        )
        new_power = power - self.registry.adr_power_step_dbm
        if margin <= 0 or new_power < self.registry.tx_power_min_dbm:
            return
        self._last_cmd_at[dev] = count
        self.ric.e2_control(
            self.xapp_id,
            ControlCommand(
                target_node=self.target,
                parameter_path=f"device/{dev:08x}/link_adr",
                value={"sf": sf, "power": new_power},
                deadline_ns=ts + 1_000_000_000,
                caused_by_ns=ts,
            ),
        )

    def forecast(self, dev: int) -> EnergyReport:
        """Linear battery extrapolation over the observed window."""
        history = self._history[dev]
        t0, b0 = history[0][0], history[0][1]
        t1, b1 = history[-1][0], history[-1][1]
        span_s = max((t1 - t0) / 1e9, 1e-9)
        drain = max((b0 - b1) / span_s, 0.0)
        lifetime = b1 / drain if drain > 0 else float("inf")
        ts, _, airtime, power, _, _ = history[-1]
        return EnergyReport(
            dev_addr=dev,
            energy_per_uplink_mas=energy_per_uplink_mas(airtime, power, self.registry),
            drain_pct_per_s=drain,
            forecast_lifetime_s=lifetime,
        )


def rapp_energy_efficiency(
    archive: Iterable[KpiRecord], registry: ConstantsRegistry | None = None
) -> Optional[dict]:
    """Digest a fleet KPI archive into an ENERGY_SAVING policy draft.

    Computes the fleet transmit-energy distribution by spreading factor;
    when one sf of 9 or above dominates (>= half the fleet energy) the
    draft recommends capping the fleet below it. Returns None on an
    empty archive or when no recommendation is warranted.
    """
    reg = registry or load_constants()
    energy_by_sf: dict[int, float] = defaultdict(float)
    for record in archive:
        metrics = record.metrics
        if "airtime_s" not in metrics or "sf" not in metrics:
            continue
        power = int(metrics.get("tx_power_dbm", 14))
        energy_by_sf[int(metrics["sf"])] += energy_per_uplink_mas(
            metrics["airtime_s"], power, reg
        )
    total = sum(energy_by_sf.values())
    if total <= 0:
        return None
    distribution = {sf: energy / total for sf, energy in sorted(energy_by_sf.items())}
    dominant = max(distribution, key=lambda sf: (distribution[sf], sf))
    draft: Optional[dict] = None
    if distribution[dominant] >= 0.5 and dominant >= 9:
        rationale = (
            f"sf{dominant} carries {distribution[dominant]:.0%} of fleet transmit "
            f"energy; review whether those devices can run at sf{dominant - 1} or below"
        )
        draft = {
            "policy_type": "ENERGY_SAVING",
            "policy_id": f"rapp-energy-sf{dominant}",
            "body": {"max_sf": dominant - 1, "rationale": rationale},
        }
    return {
        "energy_share_by_sf": distribution,
        "total_energy_mas": total,
        "draft_policy": draft,
    } if draft is not None else None
