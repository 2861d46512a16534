"""Distributed localized model-predictive control synthesized from trajectory data."""

from .consensus import ConsensusSolver, run_receding_horizon
from .datalog import TrajectoryData, collect_excited_data, hankel
from .estimator import DataDrivenLocalizedMPC
from .exceptions import (ArgumentError, DataCollectionError, DataError, DdlmpcError,
                         InfeasibleError, NonConvergenceError)
from .localsls import augmented_region, build_local_programs, required_local_length
from .plant import LtiSystem, make_chain_system
from .response import ConstraintSpec, CostSpec, SystemResponse
from .topology import Topology

__version__ = "0.1.0"

__all__ = [
    "ArgumentError", "ConsensusSolver", "ConstraintSpec", "CostSpec", "DataCollectionError",
    "DataDrivenLocalizedMPC", "DataError", "DdlmpcError", "InfeasibleError", "LtiSystem",
    "NonConvergenceError", "SystemResponse", "Topology", "TrajectoryData", "augmented_region",
    "build_local_programs", "collect_excited_data", "hankel", "make_chain_system",
    "required_local_length", "run_receding_horizon",
]
