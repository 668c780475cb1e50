"""Domain types and the static/dynamic power split with proportional attribution.

Node power is split into a calibrated static part, reported per node as a
single figure, and a dynamic remainder. The dynamic remainder is shared
among the node's workload containers in proportion to their CPU usage;
control-plane containers are excluded because their idle cost is already
part of the static figure.

All quantities are plain floats: watts, CPU in cores, timestamps in seconds.
"""

from __future__ import annotations

import enum
import math
import re
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional

from .errors import MissingProfile, SampleSkew

NodeRef = str

DEFAULT_SKEW_BOUND = 30.0


def _require_name(value: str, what: str) -> None:
    if not isinstance(value, str) or not value:
        raise ValueError(f"{what} must be a non-empty string, got {value!r}")


@dataclass(frozen=True, order=True)
class ContainerRef:
    namespace: str
    pod: str
    container: str
    node: NodeRef

    def __post_init__(self):
        _require_name(self.namespace, "namespace")
        _require_name(self.pod, "pod")
        _require_name(self.container, "container")
        _require_name(self.node, "node")


@dataclass(frozen=True)
class PowerSample:
    node: NodeRef
    watts: float
    timestamp: float
    interval_hint: Optional[float] = None

    def __post_init__(self):
        _require_name(self.node, "node")
        if not math.isfinite(self.watts) or self.watts < 0:
            raise ValueError(f"watts must be finite and >= 0, got {self.watts!r}")


@dataclass(frozen=True)
class CpuSample:
    """CPU usage of one node and its running containers, in cores.

    ``node_cpu`` includes system overhead, so the container sum may be lower.
    """

    timestamp: float
    node: NodeRef
    node_cpu: float
    containers: Mapping[ContainerRef, float] = field(default_factory=dict)

    def __post_init__(self):
        _require_name(self.node, "node")
        if not self.node_cpu >= 0:
            raise ValueError(f"node_cpu must be >= 0, got {self.node_cpu!r}")
        for ref, cores in self.containers.items():
            if ref.node != self.node:
                raise ValueError(f"container {ref} is not on node {self.node!r}")
            if not cores >= 0:
                raise ValueError(f"container {ref} has negative cpu {cores!r}")


class Provenance(str, enum.Enum):
    BASE_INIT = "BASE_INIT"
    BOOTSTRAP_INIT = "BOOTSTRAP_INIT"
    MANUAL = "MANUAL"


@dataclass(frozen=True)
class StaticPowerProfile:
    static_watts: Mapping[NodeRef, float]
    provenance: Provenance
    calibrated_at: float

    def __post_init__(self):
        for node, watts in self.static_watts.items():
            _require_name(node, "node")
            if not (math.isfinite(watts) and watts > 0):
                raise ValueError(f"static power for {node!r} must be > 0, got {watts!r}")

    def for_node(self, node: NodeRef) -> float:
        try:
            return self.static_watts[node]
        except KeyError:
            raise MissingProfile(node) from None


@dataclass(frozen=True)
class AttributionRecord:
    timestamp: float
    node: NodeRef
    node_watts: float
    static_watts: float
    dynamic_watts: float
    residual_watts: float
    unattributed_watts: float
    per_container: Mapping[ContainerRef, float]
    cpu_timestamp: Optional[float] = None

    def accounted_watts(self) -> float:
        """Static + attributed + residual + unattributed; equals ``node_watts``."""
        return (
            self.static_watts
            + math.fsum(self.per_container.values())
            + self.residual_watts
            + self.unattributed_watts
        )


class ControlPlaneMatcher:
    """Classifies pod names as control plane via full-match regular expressions."""

    def __init__(self, patterns: Iterable[str] = ()):
        self.patterns = tuple(patterns)
        compiled = []
        for p in self.patterns:
            try:
                compiled.append(re.compile(p))
            except re.error as exc:
                raise ValueError(f"invalid control-plane pattern {p!r}: {exc}") from None
        self._compiled = tuple(compiled)

    def matches(self, pod: str) -> bool:
        return any(rx.fullmatch(pod) for rx in self._compiled)

    def __repr__(self):
        return f"ControlPlaneMatcher({list(self.patterns)!r})"

    def __eq__(self, other):
        return isinstance(other, ControlPlaneMatcher) and self.patterns == other.patterns

    def __hash__(self):
        return hash(self.patterns)


def split_power(node_watts: float, static_watts: float) -> tuple[float, float]:
    """Return ``(dynamic, residual)``; residual is the signed shortfall below static."""
    if not static_watts > 0:
        raise ValueError(f"static_watts must be > 0, got {static_watts!r}")
    if not node_watts >= 0:
        raise ValueError(f"node_watts must be >= 0, got {node_watts!r}")
    excess = node_watts - static_watts
    if excess >= 0:
        return excess, 0.0
    return 0.0, excess


def attribute_power(
    dynamic_watts: float, cpu: CpuSample, matcher: ControlPlaneMatcher
) -> dict[ContainerRef, float]:
    """Share ``dynamic_watts`` among non-control-plane containers by CPU.

    Returns all-zero shares when the attributable CPU sum is zero; the caller
    reports the whole amount as unattributed in that case.
    """
    if not dynamic_watts >= 0:
        raise ValueError(f"dynamic_watts must be >= 0, got {dynamic_watts!r}")
    workload = {
        ref: cores for ref, cores in cpu.containers.items() if not matcher.matches(ref.pod)
    }
    total = math.fsum(workload.values())
    if total <= 0:
        return {ref: 0.0 for ref in workload}
    return {ref: dynamic_watts * (cores / total) for ref, cores in workload.items()}


def snapshot_attribution(
    power: PowerSample,
    cpu: CpuSample,
    profile: StaticPowerProfile,
    matcher: ControlPlaneMatcher,
    skew_bound: float = DEFAULT_SKEW_BOUND,
    power_lag: float = 0.0,
) -> AttributionRecord:
    """Build the attribution record for one node from a paired power/CPU sample.

    ``power_lag`` shifts the expected CPU timestamp back by the delay the power
    source is known to have, so the skew check compares like with like.
    """
    if power.node != cpu.node:
        raise ValueError(f"power sample for {power.node!r} paired with cpu for {cpu.node!r}")
    static = profile.for_node(power.node)
    skew = abs((power.timestamp - power_lag) - cpu.timestamp)
    if skew > skew_bound:
        raise SampleSkew(skew, skew_bound)

    dynamic, residual = split_power(power.watts, static)
    shares = attribute_power(dynamic, cpu, matcher)
    attributed = math.fsum(shares.values())
    unattributed = dynamic if attributed == 0 else 0.0
    return AttributionRecord(
        timestamp=power.timestamp,
        node=power.node,
        node_watts=power.watts,
        static_watts=static,
        dynamic_watts=dynamic,
        residual_watts=residual,
        unattributed_watts=unattributed,
        per_container=shares,
        cpu_timestamp=cpu.timestamp,
    )


class CpuHistory:
    """Recent CPU samples for one node, for pairing with power readings."""

    def __init__(self, maxlen: int = 256):
        self._samples: deque[CpuSample] = deque(maxlen=maxlen)

    def add(self, sample: CpuSample) -> None:
        self._samples.append(sample)

    def __len__(self):
        return len(self._samples)

    def latest(self) -> Optional[CpuSample]:
        return self._samples[-1] if self._samples else None

    def nearest(self, target: float, skew_bound: float) -> Optional[CpuSample]:
        """Sample closest to ``target`` within ``skew_bound``; ties go to the newer one."""
        best = None
        best_gap = math.inf
        for sample in self._samples:
            gap = abs(sample.timestamp - target)
            if gap <= skew_bound and gap <= best_gap:
                best, best_gap = sample, gap
        return best
