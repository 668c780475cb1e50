"""Deterministic evaluation of a scenario at arbitrary virtual times.

The cluster state is piecewise constant between events, so every distinct
state is computed once and looked up by bisection. When workload plus
control-plane demand exceeds a node's capacity, every consumer on that node
is scaled down by the same factor.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Mapping

from ..errors import OutOfRange
from ..model import ContainerRef, CpuSample, NodeRef, Provenance, StaticPowerProfile
from ..power import SimulatedPowerCollector, poll_simulated
from .scenario import ClusterScenario, EventKind


@dataclass(frozen=True)
class NodeState:
    node_cpu: float
    containers: Mapping[ContainerRef, float]
    # Own cores plus the control-plane cores each workload container induces.
    true_dynamic_cores: Mapping[ContainerRef, float]


@dataclass(frozen=True)
class SimState:
    t: float
    cpu: Mapping[NodeRef, CpuSample]
    node_watts: Mapping[NodeRef, float]
    true_dynamic_watts: Mapping[ContainerRef, float]


class Simulation:
    def __init__(self, scenario: ClusterScenario):
        self.scenario = scenario
        self._times: list[float] = []
        self._running: list[dict] = []
        running: dict[tuple[str, str], tuple[str, str, float]] = {}
        for ev in scenario.events:
            key = (ev.namespace, ev.pod)
            if ev.kind is EventKind.START_POD:
                running[key] = (ev.node, ev.container, ev.cpu_cores)
            else:
                running.pop(key, None)
            if self._times and self._times[-1] == ev.at:
                self._running[-1] = dict(running)
            else:
                self._times.append(ev.at)
                self._running.append(dict(running))
        self._node_state = lru_cache(maxsize=None)(self._compute_node_state)

    def _segment(self, t: float) -> int:
        """Index into the state list; -1 means before the first event."""
        return bisect.bisect_right(self._times, t) - 1

    def _compute_node_state(self, segment: int, node: NodeRef) -> NodeState:
        sim_node = self.scenario.node(node)
        running = self._running[segment] if segment >= 0 else {}
        workload = {
            ContainerRef(ns, pod, container, node): cores
            for (ns, pod), (n, container, cores) in sorted(running.items())
            if n == node
        }
        w_total = math.fsum(workload.values())
        cps = [cp for cp in self.scenario.control_plane_pods if cp.node == node]
        coupling = math.fsum(cp.coupling for cp in cps)
        cp_cores = {
            ContainerRef(cp.namespace, cp.pod, cp.container, node): cp.baseline_cores
            + cp.coupling * w_total
            for cp in cps
        }
        demand = w_total + math.fsum(cp_cores.values()) + sim_node.overhead_cores
        scale = 1.0 if demand <= sim_node.capacity_cores else sim_node.capacity_cores / demand

        containers = {ref: c * scale for ref, c in cp_cores.items()}
        for ref, c in workload.items():
            containers[ref] = c * scale
        node_cpu = min(demand, sim_node.capacity_cores)
        true_dyn = {ref: c * scale * (1.0 + coupling) for ref, c in workload.items()}
        return NodeState(node_cpu=node_cpu, containers=containers, true_dynamic_cores=true_dyn)

    def _check(self, t: float) -> None:
        if not (0.0 <= t <= self.scenario.duration):
            raise OutOfRange(f"t={t} outside scenario {self.scenario.name!r} [0, {self.scenario.duration}]")

    def node_state(self, node: NodeRef, t: float) -> NodeState:
        self._check(t)
        return self._node_state(self._segment(t), node)

    def node_cpu_at(self, node: NodeRef, t: float) -> float:
        """Node CPU used by the power model; times before the start read as t=0."""
        t = min(max(t, 0.0), self.scenario.duration)
        return self._node_state(self._segment(t), node).node_cpu

    def cpu_sample(self, node: NodeRef, t: float, namespaces=None) -> CpuSample:
        st = self.node_state(node, t)
        containers = st.containers
        if namespaces is not None:
            containers = {r: c for r, c in containers.items() if r.namespace in namespaces}
        return CpuSample(timestamp=t, node=node, node_cpu=st.node_cpu, containers=dict(containers))

    def node_watts(self, node: NodeRef, t: float) -> float:
        self._check(t)
        model = self.scenario.node(node).power
        return poll_simulated(model, lambda x: self.node_cpu_at(node, x), t, node).watts

    def true_dynamic_watts(self, node: NodeRef, t: float) -> dict[ContainerRef, float]:
        st = self.node_state(node, t)
        slope = self.scenario.node(node).power.slope
        return {ref: slope * cores for ref, cores in st.true_dynamic_cores.items()}

    def true_static_watts(self, node: NodeRef) -> float:
        """Power of the node with no workload: floor plus idle control plane and overhead."""
        sim_node = self.scenario.node(node)
        idle = math.fsum(cp.baseline_cores for cp in self.scenario.control_plane_pods if cp.node == node)
        idle = min(idle + sim_node.overhead_cores, sim_node.capacity_cores)
        return sim_node.power.static_floor + sim_node.power.slope * idle

    def true_profile(self) -> StaticPowerProfile:
        return StaticPowerProfile(
            static_watts={n.name: self.true_static_watts(n.name) for n in self.scenario.nodes},
            provenance=Provenance.MANUAL,
            calibrated_at=0.0,
        )

    def state(self, t: float) -> SimState:
        cpu, watts, truth = {}, {}, {}
        for n in self.scenario.nodes:
            cpu[n.name] = self.cpu_sample(n.name, t)
            watts[n.name] = self.node_watts(n.name, t)
            truth.update(self.true_dynamic_watts(n.name, t))
        return SimState(t=t, cpu=cpu, node_watts=watts, true_dynamic_watts=truth)

    def power_collectors(self, clock) -> dict[NodeRef, SimulatedPowerCollector]:
        return {
            n.name: SimulatedPowerCollector(
                n.name, n.power, lambda x, name=n.name: self.node_cpu_at(name, x), _RangeChecked(self, clock)
            )
            for n in self.scenario.nodes
        }

    def metrics_source(self, clock, namespaces=None) -> "SimulatedMetricsSource":
        return SimulatedMetricsSource(self, clock, namespaces)


class _RangeChecked:
    """Clock view that refuses to read past the end of the scenario."""

    def __init__(self, sim: Simulation, clock):
        self._sim = sim
        self._clock = clock

    def now(self) -> float:
        t = self._clock.now()
        self._sim._check(t)
        return t


class SimulatedMetricsSource:
    """Metrics-source interface backed by a simulation and a (virtual) clock."""

    def __init__(self, sim: Simulation, clock, namespaces=None):
        self.sim = sim
        self.clock = clock
        self.namespaces = set(namespaces) if namespaces is not None else None

    def node_capacity(self) -> dict[NodeRef, float]:
        return {n.name: n.capacity_cores for n in self.sim.scenario.nodes}

    def poll_node_cpu(self) -> dict[NodeRef, float]:
        t = self.clock.now()
        return {n.name: self.sim.node_state(n.name, t).node_cpu for n in self.sim.scenario.nodes}

    def poll_container_cpu(self) -> dict[NodeRef, CpuSample]:
        t = self.clock.now()
        return {n.name: self.sim.cpu_sample(n.name, t, self.namespaces) for n in self.sim.scenario.nodes}


_SIM_CACHE: dict[ClusterScenario, Simulation] = {}


def simulation_for(scenario: ClusterScenario) -> Simulation:
    sim = _SIM_CACHE.get(scenario)
    if sim is None:
        if len(_SIM_CACHE) > 32:
            _SIM_CACHE.clear()
        sim = _SIM_CACHE[scenario] = Simulation(scenario)
    return sim


def simulate_state(scenario: ClusterScenario, t: float) -> SimState:
    """CPU samples, sensor watts and per-container truth at virtual time ``t``."""
    return simulation_for(scenario).state(t)
