"""Deterministic discrete-event simulator for O-LoRaWAN deployments."""

from .channel import (  # noqa: F401
    ChannelParams,
    CollisionEntry,
    airtime,
    collision_resolve,
    link_snr_db,
    noise_floor_dbm,
    path_loss_db,
)
from .events import Simulator  # noqa: F401
from .scenario import Scenario, ScenarioError, load_scenario  # noqa: F401
from .runner import AuditFailure, RunResult, run_scenario  # noqa: F401
