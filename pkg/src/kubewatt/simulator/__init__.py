"""Deterministic cluster and power simulator used in place of real hardware."""

from .catalog import builtin_names, builtin_scenario, builtin_scenarios
from .engine import SimState, Simulation, SimulatedMetricsSource, simulate_state
from .replay import ReplayResult, TickResult, replay, write_trace
from .scenario import (
    ClusterScenario,
    ControlPlanePod,
    EventKind,
    SimNode,
    WorkloadEvent,
    dump_scenario,
    load_scenario,
)

__all__ = [
    "ClusterScenario",
    "ControlPlanePod",
    "EventKind",
    "ReplayResult",
    "SimNode",
    "SimState",
    "SimulatedMetricsSource",
    "Simulation",
    "TickResult",
    "WorkloadEvent",
    "builtin_names",
    "builtin_scenario",
    "builtin_scenarios",
    "dump_scenario",
    "load_scenario",
    "replay",
    "simulate_state",
    "write_trace",
]
