"""fleetchain: a deterministic simulator of a ledger-coordinated robot fleet.

A miniature permissioned ledger (identities, ordering with block cutting,
MVCC validation, versioned world state) drives a two-robot inventory
inspection mission: smart contracts record paths, detected objects and
battery level, and a battery threshold triggers a chain-mediated docking
sequence with a switch from room-anchor to vehicle-anchor UWB
localization.
"""

from .ledger import (
    Block,
    CommitRecord,
    Identity,
    Ledger,
    LedgerConfig,
    Transaction,
)
from .scenario import Scenario, default_scenario, load_scenario

__version__ = "0.1.0"

__all__ = [
    "Block",
    "CommitRecord",
    "Identity",
    "Ledger",
    "LedgerConfig",
    "Scenario",
    "Transaction",
    "default_scenario",
    "load_scenario",
    "__version__",
]
