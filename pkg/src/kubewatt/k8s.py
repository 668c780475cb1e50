"""CPU usage from the Kubernetes resource-metrics API, and control-plane classification.

Everything is normalized to cores at ingestion. The live client joins three
views: container usage from ``metrics.k8s.io`` pods, node usage from
``metrics.k8s.io`` nodes, and pod placement/phase from the core ``/api/v1/pods``
list (the metrics API does not say which node a pod runs on).
"""

from __future__ import annotations

import enum
import logging
import math
import os
import re
import time
from dataclasses import dataclass
from datetime import datetime
from decimal import Decimal, InvalidOperation
from typing import Callable, Iterable, Mapping, Optional, Protocol

import requests

from .errors import AuthFailed, CollectorError, EmptyResponse, SchemaMismatch, Unreachable
from .model import ContainerRef, ControlPlaneMatcher, CpuSample, NodeRef

log = logging.getLogger(__name__)

SERVICE_ACCOUNT_DIR = "/var/run/secrets/kubernetes.io/serviceaccount"
METRICS_PREFIX = "/apis/metrics.k8s.io/v1beta1"
# Container CPU may exceed node CPU by this fraction before it is logged.
CPU_SUM_TOLERANCE = 0.05


class SourceMode(str, enum.Enum):
    LIVE = "LIVE"
    SIMULATED = "SIMULATED"


@dataclass(frozen=True)
class MetricsSourceConfig:
    mode: SourceMode = SourceMode.LIVE
    api_base: str = "https://kubernetes.default.svc"
    namespaces: Optional[tuple[str, ...]] = None
    poll_interval: float = 15.0
    token: Optional[str] = None
    token_path: str = f"{SERVICE_ACCOUNT_DIR}/token"
    ca_path: str = f"{SERVICE_ACCOUNT_DIR}/ca.crt"
    tls_verify: bool = True
    timeout: float = 10.0

    def __post_init__(self):
        if self.poll_interval < 1:
            raise ValueError(f"poll_interval must be >= 1s, got {self.poll_interval!r}")


class MetricsSource(Protocol):
    def node_capacity(self) -> dict[NodeRef, float]: ...

    def poll_node_cpu(self) -> dict[NodeRef, float]: ...

    def poll_container_cpu(self) -> dict[NodeRef, CpuSample]: ...


_DECIMAL_SUFFIX = {
    "n": Decimal("1e-9"),
    "u": Decimal("1e-6"),
    "m": Decimal("1e-3"),
    "": Decimal(1),
    "k": Decimal("1e3"),
    "M": Decimal("1e6"),
    "G": Decimal("1e9"),
    "T": Decimal("1e12"),
    "P": Decimal("1e15"),
    "E": Decimal("1e18"),
}
_BINARY_SUFFIX = {s: Decimal(1024) ** (i + 1) for i, s in enumerate(["Ki", "Mi", "Gi", "Ti", "Pi", "Ei"])}
_QUANTITY = re.compile(r"^([+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)([a-zA-Z]*)$")


def parse_cpu_quantity(quantity) -> float:
    """Convert a Kubernetes CPU quantity such as ``"123456789n"`` or ``"250m"`` to cores."""
    if isinstance(quantity, (int, float)) and not isinstance(quantity, bool):
        return float(quantity)
    if not isinstance(quantity, str):
        raise SchemaMismatch(f"CPU quantity must be a string, got {quantity!r}")
    m = _QUANTITY.match(quantity.strip())
    if not m:
        raise SchemaMismatch(f"unparseable CPU quantity {quantity!r}")
    number, suffix = m.groups()
    scale = _DECIMAL_SUFFIX.get(suffix) or _BINARY_SUFFIX.get(suffix)
    if scale is None:
        raise SchemaMismatch(f"unknown quantity suffix in {quantity!r}")
    try:
        return float(Decimal(number) * scale)
    except InvalidOperation:
        raise SchemaMismatch(f"unparseable CPU quantity {quantity!r}") from None


def parse_timestamp(value: str) -> float:
    return datetime.fromisoformat(value.replace("Z", "+00:00")).timestamp()


class CounterRateConverter:
    """Turns cumulative CPU-seconds counters into core rates by differencing.

    A decreasing counter (reset or restart) yields a rate of 0 for that step.
    """

    def __init__(self):
        self._last: dict[object, tuple[float, float]] = {}

    def update(self, key, cpu_seconds: float, timestamp: float) -> Optional[float]:
        prev = self._last.get(key)
        self._last[key] = (cpu_seconds, timestamp)
        if prev is None:
            return None
        prev_value, prev_ts = prev
        elapsed = timestamp - prev_ts
        if elapsed <= 0:
            return None
        return max(cpu_seconds - prev_value, 0.0) / elapsed

    def forget(self, keep: Iterable) -> None:
        keep = set(keep)
        for key in list(self._last):
            if key not in keep:
                del self._last[key]


def classify_control_plane(
    sample: CpuSample, matcher: ControlPlaneMatcher
) -> tuple[set[ContainerRef], set[ContainerRef]]:
    control, workload = set(), set()
    for ref in sample.containers:
        (control if matcher.matches(ref.pod) else workload).add(ref)
    return control, workload


def control_plane_cpu(sample: CpuSample, matcher: ControlPlaneMatcher) -> float:
    return math.fsum(c for ref, c in sample.containers.items() if matcher.matches(ref.pod))


def check_cpu_consistency(sample: CpuSample, tolerance: float = CPU_SUM_TOLERANCE) -> bool:
    """Container CPU should not exceed node CPU (which adds system overhead)."""
    total = math.fsum(sample.containers.values())
    ok = total <= sample.node_cpu * (1 + tolerance) + 1e-9
    if not ok:
        log.warning(
            "metric anomaly on %s: containers use %.3f cores but node reports %.3f",
            sample.node,
            total,
            sample.node_cpu,
        )
    return ok


class K8sMetricsClient:
    """Polling client for the resource-metrics API."""

    def __init__(
        self,
        cfg: MetricsSourceConfig,
        session: Optional[requests.Session] = None,
        clock: Optional[Callable[[], float]] = None,
    ):
        self.cfg = cfg
        self._session = session or requests.Session()
        self._clock = clock or time.time
        self._headers = {"Accept": "application/json"}
        token = cfg.token
        if token is None and os.path.exists(cfg.token_path):
            with open(cfg.token_path) as fh:
                token = fh.read().strip()
        if token:
            self._headers["Authorization"] = f"Bearer {token}"
        if not cfg.tls_verify:
            self._verify = False
        elif os.path.exists(cfg.ca_path):
            self._verify = cfg.ca_path
        else:
            self._verify = True

    def _get(self, path: str, params: Optional[Mapping[str, str]] = None) -> dict:
        url = self.cfg.api_base.rstrip("/") + path
        try:
            resp = self._session.get(
                url, headers=self._headers, params=params, verify=self._verify, timeout=self.cfg.timeout
            )
        except requests.RequestException as exc:
            raise Unreachable(f"{type(exc).__name__} contacting {url}") from exc
        if resp.status_code in (401, 403):
            raise AuthFailed(f"HTTP {resp.status_code} from {url}")
        if resp.status_code >= 500:
            raise Unreachable(f"HTTP {resp.status_code} from {url}")
        if resp.status_code != 200:
            raise CollectorError(f"HTTP {resp.status_code} from {url}")
        try:
            body = resp.json()
        except ValueError as exc:
            raise SchemaMismatch(f"non-JSON response from {url}") from exc
        if not isinstance(body, dict) or not isinstance(body.get("items"), list):
            raise SchemaMismatch(f"response from {url} has no items list")
        return body

    def _list_namespaced(self, group_path: str, resource: str, params=None) -> list[dict]:
        if self.cfg.namespaces is None:
            return self._get(f"{group_path}/{resource}", params)["items"]
        items = []
        for ns in self.cfg.namespaces:
            items.extend(self._get(f"{group_path}/namespaces/{ns}/{resource}", params)["items"])
        return items

    def _fresh(self, item: dict, now: float) -> bool:
        ts = item.get("timestamp")
        if not ts:
            return True
        try:
            age = now - parse_timestamp(ts)
        except ValueError:
            return True
        return age <= 2 * self.cfg.poll_interval

    def _schedulable_nodes(self) -> dict[str, dict]:
        nodes = {}
        for item in self._get("/api/v1/nodes")["items"]:
            name = item.get("metadata", {}).get("name")
            if name and not item.get("spec", {}).get("unschedulable", False):
                nodes[name] = item
        return nodes

    def node_capacity(self) -> dict[NodeRef, float]:
        capacity = {}
        for name, item in self._schedulable_nodes().items():
            status = item.get("status", {})
            cpu = status.get("allocatable", {}).get("cpu") or status.get("capacity", {}).get("cpu")
            if cpu is None:
                raise SchemaMismatch(f"node {name} reports no allocatable cpu")
            capacity[name] = parse_cpu_quantity(cpu)
        if not capacity:
            raise EmptyResponse("cluster reports no schedulable nodes")
        return capacity

    def poll_node_cpu(self) -> dict[NodeRef, float]:
        now = self._clock()
        usage = {}
        for item in self._get(f"{METRICS_PREFIX}/nodes")["items"]:
            name = item.get("metadata", {}).get("name")
            cpu = item.get("usage", {}).get("cpu")
            if not name or cpu is None:
                raise SchemaMismatch("node metrics item without name or usage.cpu")
            if not self._fresh(item, now):
                log.debug("discarding stale node metrics for %s", name)
                continue
            usage[name] = max(parse_cpu_quantity(cpu), 0.0)
        if not usage:
            raise EmptyResponse("metrics API returned no nodes")
        return usage

    def poll_container_cpu(self) -> dict[NodeRef, CpuSample]:
        now = self._clock()
        node_cpu = self.poll_node_cpu()

        placement = {}
        running = self._list_namespaced("/api/v1", "pods", {"fieldSelector": "status.phase=Running"})
        for pod in running:
            meta = pod.get("metadata", {})
            if pod.get("status", {}).get("phase", "Running") != "Running":
                continue
            node = pod.get("spec", {}).get("nodeName")
            if node:
                placement[(meta.get("namespace"), meta.get("name"))] = node

        per_node: dict[str, dict[ContainerRef, float]] = {n: {} for n in node_cpu}
        for item in self._list_namespaced(METRICS_PREFIX, "pods"):
            meta = item.get("metadata", {})
            key = (meta.get("namespace"), meta.get("name"))
            node = placement.get(key)
            if node is None or node not in per_node:
                # Pending, Succeeded, Failed or unknown pods have no running containers.
                continue
            if not self._fresh(item, now):
                continue
            for c in item.get("containers", []):
                cpu = c.get("usage", {}).get("cpu")
                if cpu is None or not c.get("name"):
                    continue
                ref = ContainerRef(key[0], key[1], c["name"], node)
                per_node[node][ref] = max(parse_cpu_quantity(cpu), 0.0)

        samples = {}
        for node, containers in per_node.items():
            sample = CpuSample(timestamp=now, node=node, node_cpu=node_cpu[node], containers=containers)
            check_cpu_consistency(sample)
            samples[node] = sample
        return samples


def poll_node_cpu(cfg: MetricsSourceConfig, session=None) -> dict[NodeRef, float]:
    return K8sMetricsClient(cfg, session).poll_node_cpu()


def poll_container_cpu(cfg: MetricsSourceConfig, session=None) -> dict[NodeRef, CpuSample]:
    return K8sMetricsClient(cfg, session).poll_container_cpu()
