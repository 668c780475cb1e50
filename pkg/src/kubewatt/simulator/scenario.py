"""Scenario definitions and their YAML file format.

A scenario file looks like::

    name: my-test
    duration: 30m            # seconds, or a string with s/m/h suffix
    seed: 7
    cadence: 15s             # replay tick
    nodes:
      - name: sut
        capacity_cores: 64
        overhead_cores: 0    # node CPU not owned by any container
        power: {static_floor: 199.1, slope: 3.0, lag: 60s, noise_sd: 0.2}
    control_plane:
      - {pod: coredns-7c5b8d-x2x9q, namespace: kube-system, node: sut,
         baseline_cores: 0.01, coupling: 0.0001, container: coredns}
    events:
      - {at: 1m, kind: START_POD, pod: stress-1, namespace: stress, node: sut, cpu_cores: 32}
      - {at: 6m, kind: STOP_POD, pod: stress-1, namespace: stress, node: sut}

``coupling`` is extra control-plane cores per workload core on the same node.
Events at the same instant apply in file order.
"""

from __future__ import annotations

import enum
import math
import re
from dataclasses import dataclass, field, replace
from typing import Optional

import yaml

from ..errors import ScenarioError
from ..power import SimPowerModel
from ..units import parse_duration


class EventKind(str, enum.Enum):
    START_POD = "START_POD"
    STOP_POD = "STOP_POD"
    DELETE_POD = "DELETE_POD"
    COMPLETE_POD = "COMPLETE_POD"


@dataclass(frozen=True)
class SimNode:
    name: str
    capacity_cores: float
    power: SimPowerModel
    overhead_cores: float = 0.0


@dataclass(frozen=True)
class ControlPlanePod:
    pod: str
    node: str
    baseline_cores: float
    coupling: float = 0.0
    namespace: str = "kube-system"
    container: str = "main"


@dataclass(frozen=True)
class WorkloadEvent:
    at: float
    kind: EventKind
    pod: str
    namespace: str
    node: str
    cpu_cores: float = 0.0
    container: str = "main"


@dataclass(frozen=True)
class ClusterScenario:
    name: str
    nodes: tuple[SimNode, ...]
    control_plane_pods: tuple[ControlPlanePod, ...]
    events: tuple[WorkloadEvent, ...]
    duration: float
    seed: int = 0
    cadence: float = 15.0
    description: str = field(default="", compare=False)

    def __post_init__(self):
        validate(self)

    def node(self, name: str) -> SimNode:
        for n in self.nodes:
            if n.name == name:
                return n
        raise KeyError(name)

    def with_seed(self, seed: int) -> "ClusterScenario":
        nodes = tuple(replace(n, power=replace(n.power, seed=seed)) for n in self.nodes)
        return replace(self, seed=seed, nodes=nodes)

    def control_plane_patterns(self) -> list[str]:
        """Full-match patterns selecting exactly this scenario's control-plane pods."""
        return [re.escape(p.pod) for p in self.control_plane_pods]


def validate(s: ClusterScenario) -> None:
    if not s.nodes:
        raise ScenarioError(f"scenario {s.name!r} declares no nodes")
    names = [n.name for n in s.nodes]
    if len(set(names)) != len(names):
        raise ScenarioError(f"scenario {s.name!r} has duplicate node names")
    for n in s.nodes:
        if not n.name or not n.capacity_cores > 0 or n.overhead_cores < 0:
            raise ScenarioError(f"node {n.name!r}: capacity must be > 0 and overhead >= 0")
    if not (s.duration > 0 and math.isfinite(s.duration)):
        raise ScenarioError("duration must be positive")
    if not s.cadence > 0:
        raise ScenarioError("cadence must be positive")
    for cp in s.control_plane_pods:
        if cp.node not in names:
            raise ScenarioError(f"control-plane pod {cp.pod!r} targets unknown node {cp.node!r}")
        if cp.baseline_cores < 0 or cp.coupling < 0:
            raise ScenarioError(f"control-plane pod {cp.pod!r} has a negative load term")

    started: dict[tuple[str, str], str] = {}
    last = -math.inf
    for ev in s.events:
        if ev.at < last:
            raise ScenarioError(f"events are not sorted by time at {ev.pod!r} (t={ev.at})")
        last = ev.at
        if ev.node not in names:
            raise ScenarioError(f"event for {ev.pod!r} targets unknown node {ev.node!r}")
        if ev.at < 0 or ev.at > s.duration:
            raise ScenarioError(f"event for {ev.pod!r} at t={ev.at} lies outside the scenario")
        if ev.cpu_cores < 0:
            raise ScenarioError(f"event for {ev.pod!r} has negative cpu_cores")
        key = (ev.namespace, ev.pod)
        if ev.kind is EventKind.START_POD:
            started[key] = ev.node
        elif key not in started:
            raise ScenarioError(f"{ev.kind.value} for {ev.namespace}/{ev.pod} before it was started")


# --- file format -----------------------------------------------------------


def _power_from_dict(d: dict, seed: int) -> SimPowerModel:
    return SimPowerModel(
        static_floor=float(d["static_floor"]),
        slope=float(d["slope"]),
        lag=parse_duration(d.get("lag", 0)),
        noise_sd=float(d.get("noise_sd", 0.0)),
        seed=int(d.get("seed", seed)),
    )


def scenario_from_dict(data: dict) -> ClusterScenario:
    try:
        seed = int(data.get("seed", 0))
        nodes = tuple(
            SimNode(
                name=str(n["name"]),
                capacity_cores=float(n["capacity_cores"]),
                overhead_cores=float(n.get("overhead_cores", 0.0)),
                power=_power_from_dict(n["power"], seed),
            )
            for n in data["nodes"]
        )
        default_node = nodes[0].name if nodes else ""
        cps = tuple(
            ControlPlanePod(
                pod=str(c["pod"]),
                node=str(c.get("node", default_node)),
                baseline_cores=float(c.get("baseline_cores", 0.0)),
                coupling=float(c.get("coupling", 0.0)),
                namespace=str(c.get("namespace", "kube-system")),
                container=str(c.get("container", "main")),
            )
            for c in data.get("control_plane", []) or []
        )
        events = tuple(
            WorkloadEvent(
                at=parse_duration(e["at"]),
                kind=EventKind(e["kind"]),
                pod=str(e["pod"]),
                namespace=str(e.get("namespace", "default")),
                node=str(e.get("node", default_node)),
                cpu_cores=float(e.get("cpu_cores", 0.0)),
                container=str(e.get("container", "main")),
            )
            for e in data.get("events", []) or []
        )
        return ClusterScenario(
            name=str(data.get("name", "unnamed")),
            nodes=nodes,
            control_plane_pods=cps,
            events=events,
            duration=parse_duration(data["duration"]),
            seed=seed,
            cadence=parse_duration(data.get("cadence", 15)),
            description=str(data.get("description", "")),
        )
    except ScenarioError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ScenarioError(f"malformed scenario: {exc}") from exc


def scenario_to_dict(s: ClusterScenario) -> dict:
    return {
        "name": s.name,
        "description": s.description,
        "duration": s.duration,
        "seed": s.seed,
        "cadence": s.cadence,
        "nodes": [
            {
                "name": n.name,
                "capacity_cores": n.capacity_cores,
                "overhead_cores": n.overhead_cores,
                "power": {
                    "static_floor": n.power.static_floor,
                    "slope": n.power.slope,
                    "lag": n.power.lag,
                    "noise_sd": n.power.noise_sd,
                    "seed": n.power.seed,
                },
            }
            for n in s.nodes
        ],
        "control_plane": [
            {
                "pod": c.pod,
                "namespace": c.namespace,
                "container": c.container,
                "node": c.node,
                "baseline_cores": c.baseline_cores,
                "coupling": c.coupling,
            }
            for c in s.control_plane_pods
        ],
        "events": [
            {
                "at": e.at,
                "kind": e.kind.value,
                "pod": e.pod,
                "namespace": e.namespace,
                "container": e.container,
                "node": e.node,
                "cpu_cores": e.cpu_cores,
            }
            for e in s.events
        ],
    }


def load_scenario(path: str) -> ClusterScenario:
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        raise ScenarioError(f"{path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ScenarioError(f"{path}: scenario must be a mapping")
    return scenario_from_dict(data)


def dump_scenario(s: ClusterScenario, path: Optional[str] = None) -> str:
    text = yaml.safe_dump(scenario_to_dict(s), sort_keys=False)
    if path:
        with open(path, "w") as fh:
            fh.write(text)
    return text
