"""Simulator for a qutrit-controlled multi-target NOT gate on cat-state qubits."""

__version__ = "0.1.0"

from .device import (
    DeviceParams,
    collapse_operators,
    diagnose_conditions,
    hamiltonian,
    lambda_and_gate_time,
    quality_factors,
    solve_matched_couplings,
    table1_params,
)
from .evolve import (
    EvolutionConfig,
    TrajectoryConfig,
    evolve_master,
    evolve_schrodinger,
    evolve_trajectories,
    frame_transform,
)
from .experiments import SolverConfig, SweepSpec, nonideal_initial_state, run_point, run_sweep
from .fock import HilbertSpec, StateVector, cat_logical, coherent_state, fidelity
from .gate import GhzSpec, LogicalWord, apply_ideal_unitary, ghz_target, initial_plus_state, truth_table

__all__ = [
    "DeviceParams",
    "EvolutionConfig",
    "GhzSpec",
    "HilbertSpec",
    "LogicalWord",
    "SolverConfig",
    "StateVector",
    "SweepSpec",
    "TrajectoryConfig",
    "apply_ideal_unitary",
    "cat_logical",
    "coherent_state",
    "collapse_operators",
    "diagnose_conditions",
    "evolve_master",
    "evolve_schrodinger",
    "evolve_trajectories",
    "fidelity",
    "frame_transform",
    "ghz_target",
    "hamiltonian",
    "initial_plus_state",
    "lambda_and_gate_time",
    "nonideal_initial_state",
    "quality_factors",
    "run_point",
    "run_sweep",
    "solve_matched_couplings",
    "table1_params",
    "truth_table",
]
