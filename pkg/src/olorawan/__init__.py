"""O-LoRaWAN: a LoRaWAN protocol stack organized along O-RAN lines.

Library plus ``olrw`` CLI: LoRa chirp PHY numerics, an RU/DU gateway split
over an eCPRI-style fronthaul, a network server, near-/non-RT RIC with
xApps/rApps, O1-lite management, and a deterministic discrete-event
simulator able to run the same traffic through the legacy (monolithic
gateway) and modular (split) deployments.
"""

__version__ = "0.1.0"

from .constants import load_constants  # noqa: F401
