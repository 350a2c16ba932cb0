"""Optimal quoting and external hedging for a dealer market maker."""

__version__ = "0.1.0"

from .hamiltonians import RampFunction, bar_hamiltonian, exec_hamiltonian, quote_hamiltonian
from .model import (
    ExecutionCost,
    IntensityCurve,
    ModelParams,
    SizeGrid,
    exec_cost_eval,
    intensity_eval,
    mean_size,
    reference_params,
    running_penalty,
    terminal_penalty,
)
from .solver import (
    InventoryGrid,
    SolverSettings,
    extract_policy,
    internalization_zone,
    solve,
    stationarity_gap,
    step_implicit,
)
