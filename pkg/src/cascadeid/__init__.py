"""Cascading-failure simulation and worst-case initial contingency identification."""

from .cascade import (
    CascadeOutcome,
    Disturbance,
    EngineConfig,
    apply_disturbance,
    compute_thresholds,
    evaluate_cost,
    run_cascade,
)
from .contingency import CiaConfig, CiaResult, gradient_fd, identify, identify_minimum
from .devices import HvdcLink, RelayState, TcscState, hvdc_injections, relay_step, tcsc_step
from .grid_model import (
    Branch,
    Bus,
    GridCase,
    IslandPartition,
    dc_power_flow,
    island_decomposition,
    load_case,
    parse_case,
)
from .newton_krylov import SolverConfig, gmres_correction, jfnk_solve, jvp, kkt_residual

__version__ = "0.1.0"

__all__ = [
    "Branch",
    "Bus",
    "CascadeOutcome",
    "CiaConfig",
    "CiaResult",
    "Disturbance",
    "EngineConfig",
    "GridCase",
    "HvdcLink",
    "IslandPartition",
    "RelayState",
    "SolverConfig",
    "TcscState",
    "apply_disturbance",
    "compute_thresholds",
    "dc_power_flow",
    "evaluate_cost",
    "gmres_correction",
    "gradient_fd",
    "hvdc_injections",
    "identify",
    "identify_minimum",
    "island_decomposition",
    "jfnk_solve",
    "jvp",
    "kkt_residual",
    "load_case",
    "parse_case",
    "relay_step",
    "run_cascade",
    "tcsc_step",
]
