"""Builtin scenarios modelled on the stress experiments run against a real server.

All scenarios share one system under test: a 64-thread node idling at a
199.1 W floor, drawing 3 W per busy core, with a small control plane whose
idle load adds 0.30 W.
"""

from __future__ import annotations

import random
from typing import Callable, Optional

from ..power import SimPowerModel
from .scenario import ClusterScenario, ControlPlanePod, EventKind, SimNode, WorkloadEvent

NODE = "sut"
CAPACITY = 64.0
STATIC_FLOOR = 199.1
SLOPE = 3.0
NOISE_SD = 0.2
REPORTING_LAG = 60.0

# (pod, namespace, container, idle cores, cores added per workload core)
_CONTROL_PLANE = [
    ("calico-node-x7k2p", "kube-system", "calico-node", 0.020, 0.00030),
    ("canal-5fbc9", "kube-system", "kube-flannel", 0.015, 0.00020),
    ("coredns-7c5b8d-4fj2l", "kube-system", "coredns", 0.010, 0.00010),
    ("coredns-7c5b8d-w9z8c", "kube-system", "coredns", 0.010, 0.00010),
    ("metrics-server-6d94bc-lm5tq", "kube-system", "metrics-server", 0.015, 0.00020),
    ("nfs-subdir-provisioner-8c4d7", "nfs", "provisioner", 0.010, 0.00000),
    ("kubewatt-estimator-0", "kubewatt", "kubewatt", 0.020, 0.00010),
]

CONTROL_PLANE_PATTERNS = [
    "nfs-.*",
    "calico-.*",
    "canal-.*",
    "coredns-.*",
    "metrics-.*",
    "tekton-.*",
    "kubewatt-.*",
]


def _node(lag: float, seed: int) -> SimNode:
    return SimNode(
        name=NODE,
        capacity_cores=CAPACITY,
        power=SimPowerModel(STATIC_FLOOR, SLOPE, lag=lag, noise_sd=NOISE_SD, seed=seed),
    )


def _control_plane() -> tuple[ControlPlanePod, ...]:
    return tuple(
        ControlPlanePod(pod=p, namespace=ns, container=c, node=NODE, baseline_cores=b, coupling=k)
        for p, ns, c, b, k in _CONTROL_PLANE
    )


def _ev(at, kind, pod, ns, cores=0.0, container="main"):
    return WorkloadEvent(at=float(at), kind=kind, pod=pod, namespace=ns, node=NODE, cpu_cores=cores, container=container)


def _completed_idle_pods(count: int, at: float) -> list[WorkloadEvent]:
    """Pods that run ``date`` once and exit before measurement starts."""
    events = [_ev(at, EventKind.START_POD, f"idle-{i}", "idle", 0.0, "date") for i in range(count)]
    events += [_ev(at + 5, EventKind.COMPLETE_POD, f"idle-{i}", "idle") for i in range(count)]
    return events


def idle(seed: int = 11) -> ClusterScenario:
    return ClusterScenario(
        name="idle",
        description="control plane only; input for base initialization",
        nodes=(_node(REPORTING_LAG, seed),),
        control_plane_pods=_control_plane(),
        events=(),
        duration=600.0,
        seed=seed,
    )


def single_stressor(seed: int = 23) -> ClusterScenario:
    """16 completed idle pods, then three cycles of 5 min at 32 cores and 5 min idle."""
    events = _completed_idle_pods(16, 10.0)
    start = 60.0
    for cycle in range(3):
        t0 = start + cycle * 600.0
        pod = f"stress-ng-{cycle + 1}"
        events.append(_ev(t0, EventKind.START_POD, pod, "stress", 32.0, "stress-ng"))
        events.append(_ev(t0 + 300.0, EventKind.STOP_POD, pod, "stress"))
    return ClusterScenario(
        name="single-stressor",
        description="3 x [32-core stress 5 min + idle 5 min] beside 16 completed pods",
        nodes=(_node(REPORTING_LAG, seed),),
        control_plane_pods=_control_plane(),
        events=tuple(events),
        duration=start + 1800.0,
        seed=seed,
    )


INACTIVE_STRESS_START = 75.0
INACTIVE_DELETE_AT = INACTIVE_STRESS_START + 120.0
INACTIVE_STRESS_STOP = INACTIVE_DELETE_AT + 240.0


def inactive_pods(seed: int = 37) -> ClusterScenario:
    """64 completed pods; 8-core stressor; completed pods deleted 2 min into the stress."""
    events = _completed_idle_pods(64, 10.0)
    events.append(_ev(INACTIVE_STRESS_START, EventKind.START_POD, "stress-ng-8", "stress", 8.0, "stress-ng"))
    events += [_ev(INACTIVE_DELETE_AT, EventKind.DELETE_POD, f"idle-{i}", "idle") for i in range(64)]
    events.append(_ev(INACTIVE_STRESS_STOP, EventKind.STOP_POD, "stress-ng-8", "stress"))
    return ClusterScenario(
        name="inactive-pods",
        description="delete 64 completed pods while an 8-core stressor runs",
        nodes=(_node(REPORTING_LAG, seed),),
        control_plane_pods=_control_plane(),
        events=tuple(events),
        duration=INACTIVE_STRESS_STOP + 180.0,
        seed=seed,
    )


RANDOM_STAGE = 180.0
RANDOM_HOURS = 10.0


def random_stressor(seed: int = 41, hours: float = RANDOM_HOURS) -> ClusterScenario:
    """Consecutive 3-minute stressors at uniform random levels of 1-64 cores.

    The power source reports without delay here; calibration pairs power and
    CPU by timestamp and a lagging source would smear the regression.
    """
    rng = random.Random(seed)
    events = []
    stages = int(hours * 3600 // RANDOM_STAGE)
    for i in range(stages):
        t0 = i * RANDOM_STAGE
        pod = f"stress-{i:04d}"
        if i:
            events.append(_ev(t0, EventKind.STOP_POD, f"stress-{i - 1:04d}", "stress"))
        events.append(_ev(t0, EventKind.START_POD, pod, "stress", float(rng.randint(1, 64)), "stress-ng"))
    return ClusterScenario(
        name="random-stressor",
        description="uniform random 1-64 core stressors, 3 minutes each",
        nodes=(_node(0.0, seed),),
        control_plane_pods=_control_plane(),
        events=tuple(events),
        duration=stages * RANDOM_STAGE,
        seed=seed,
    )


_FACTORIES: dict[str, Callable[..., ClusterScenario]] = {
    "idle": idle,
    "single-stressor": single_stressor,
    "inactive-pods": inactive_pods,
    "random-stressor": random_stressor,
}


def builtin_scenarios() -> dict[str, ClusterScenario]:
    return {name: factory() for name, factory in _FACTORIES.items()}


def builtin_names() -> list[str]:
    return list(_FACTORIES)


def builtin_scenario(name: str, seed: Optional[int] = None) -> ClusterScenario:
    try:
        factory = _FACTORIES[name]
    except KeyError:
        raise KeyError(f"unknown builtin scenario {name!r}; choose from {', '.join(_FACTORIES)}") from None
    return factory() if seed is None else factory(seed=seed)
