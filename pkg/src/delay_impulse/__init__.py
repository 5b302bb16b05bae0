"""Finite-horizon impulse control with decision lag and execution delay."""

from .lattice import EMPTY, PendingConfig, SpaceGrid, TimeGrid, build_grids
from .model import ProblemSpec, ValidatedProblem, validate_problem
from .oracle import brute_force_oracle
from .policy import (
    AlwaysImpulse,
    NeverImpulse,
    OrderBook,
    ThresholdImpulse,
    extract_decision,
    monte_carlo_value,
    simulate_path,
)
from .solver import ValueStore, solve
from .storage import load_store, persist_store

__version__ = "0.1.0"

__all__ = [
    "EMPTY", "PendingConfig", "SpaceGrid", "TimeGrid", "build_grids",
    "ProblemSpec", "ValidatedProblem", "validate_problem",
    "brute_force_oracle",
    "AlwaysImpulse", "NeverImpulse", "OrderBook", "ThresholdImpulse",
    "extract_decision", "monte_carlo_value", "simulate_path",
    "ValueStore", "solve", "load_store", "persist_store",
]
