"""Loosely-timed simulator for a many-core processor with hireable cores."""

from .baseline import StackOverflow, run_spa_baseline
from .engine import (
    ConfigError,
    CycleCapExceeded,
    Deadlock,
    FinalState,
    Metrics,
    SimConfig,
    SimulationError,
    Simulator,
    run,
)
from .isa import AssemblyError, Program, assemble, disassemble, validate
from .messaging import Timing
from .topology import GridConfig, build_clusters

__version__ = "0.1.0"

__all__ = [
    "AssemblyError",
    "ConfigError",
    "CycleCapExceeded",
    "Deadlock",
    "FinalState",
    "GridConfig",
    "Metrics",
    "Program",
    "SimConfig",
    "SimulationError",
    "Simulator",
    "StackOverflow",
    "Timing",
    "assemble",
    "build_clusters",
    "disassemble",
    "run",
    "run_spa_baseline",
    "validate",
]
