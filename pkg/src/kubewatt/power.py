"""Node platform power sources: a Redfish client and a seeded simulated source."""

from __future__ import annotations

import logging
import math
import random
import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Protocol
from urllib.parse import urlparse

import requests

from .errors import AuthFailed, CollectorError, SchemaMismatch, Unreachable
from .model import NodeRef, PowerSample

log = logging.getLogger(__name__)

DEFAULT_CHASSIS_PATH = "redfish/v1/Chassis/System.Embedded.1/Power"
DEFAULT_POLL_INTERVAL = 15.0
# Redfish AverageConsumedWatts is a trailing average over this window.
REDFISH_AVERAGE_WINDOW = 60.0


class PowerCollector(Protocol):
    node: NodeRef

    def poll(self) -> PowerSample: ...


@dataclass(frozen=True)
class PowerCollectorEndpoint:
    node: NodeRef
    base_url: str
    username: str = ""
    password: str = field(default="", repr=False)
    chassis_path: str = DEFAULT_CHASSIS_PATH
    poll_interval: float = DEFAULT_POLL_INTERVAL
    tls_verify: bool = True
    timeout: float = 10.0
    prefer_average: bool = True

    def __post_init__(self):
        if not self.node:
            raise ValueError("endpoint node must be non-empty")
        parsed = urlparse(self.base_url)
        if parsed.scheme not in ("http", "https") or not parsed.netloc:
            raise ValueError(f"malformed base_url {self.base_url!r}")
        if self.poll_interval < 1:
            raise ValueError(f"poll_interval must be >= 1s, got {self.poll_interval!r}")

    @property
    def url(self) -> str:
        return self.base_url.rstrip("/") + "/" + self.chassis_path.lstrip("/")


def _number(value) -> Optional[float]:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        return None
    value = float(value)
    return value if math.isfinite(value) and value >= 0 else None


def parse_power_control(body: dict, prefer_average: bool = True) -> tuple[float, float]:
    """Extract ``(watts, interval_hint)`` from a Redfish Power resource body.

    Vendors place the trailing average either under ``PowerMetrics`` or
    directly on the PowerControl entry; the instantaneous reading is
    ``PowerConsumedWatts``. Only the first PowerControl entry is used.
    """
    if not isinstance(body, dict):
        raise SchemaMismatch("Power resource is not a JSON object")
    entries = body.get("PowerControl")
    if not isinstance(entries, list) or not entries or not isinstance(entries[0], dict):
        raise SchemaMismatch("PowerControl array missing or empty")
    if len(entries) > 1:
        log.info("Power resource has %d PowerControl entries; using the first", len(entries))
    entry = entries[0]
    metrics = entry.get("PowerMetrics") if isinstance(entry.get("PowerMetrics"), dict) else {}

    window = REDFISH_AVERAGE_WINDOW
    interval_min = _number(metrics.get("IntervalInMin"))
    if interval_min:
        window = interval_min * 60.0

    average = _number(metrics.get("AverageConsumedWatts"))
    if average is None:
        average = _number(entry.get("AverageConsumedWatts"))
    instant = _number(entry.get("PowerConsumedWatts"))

    order = [(average, window), (instant, None)]
    if not prefer_average:
        order.reverse()
    for watts, hint in order:
        if watts is not None:
            return watts, hint
    raise SchemaMismatch("no AverageConsumedWatts or PowerConsumedWatts in PowerControl[0]")


class RedfishPowerCollector:
    """Polls one BMC over HTTP(S) with basic auth. Safe to share across threads."""

    def __init__(
        self,
        endpoint: PowerCollectorEndpoint,
        session: Optional[requests.Session] = None,
        clock: Optional[Callable[[], float]] = None,
    ):
        self.endpoint = endpoint
        self.node = endpoint.node
        self._session = session or requests.Session()
        self._clock = clock or time.time

    def poll(self) -> PowerSample:
        return poll_redfish(self.endpoint, self._session, self._clock)


def poll_redfish(
    endpoint: PowerCollectorEndpoint,
    session: Optional[requests.Session] = None,
    clock: Optional[Callable[[], float]] = None,
) -> PowerSample:
    http = session or requests
    now = (clock or time.time)()
    try:
        resp = http.get(
            endpoint.url,
            auth=(endpoint.username, endpoint.password) if endpoint.username else None,
            verify=endpoint.tls_verify,
            timeout=endpoint.timeout,
            headers={"Accept": "application/json"},
        )
    except requests.RequestException as exc:
        raise Unreachable(f"{endpoint.node}: {type(exc).__name__} contacting {endpoint.url}") from exc

    if resp.status_code in (401, 403):
        raise AuthFailed(f"{endpoint.node}: HTTP {resp.status_code} from {endpoint.url}")
    if resp.status_code >= 500:
        raise Unreachable(f"{endpoint.node}: HTTP {resp.status_code} from {endpoint.url}")
    if resp.status_code != 200:
        raise CollectorError(f"{endpoint.node}: HTTP {resp.status_code} from {endpoint.url}")
    try:
        body = resp.json()
    except ValueError as exc:
        raise SchemaMismatch(f"{endpoint.node}: response is not JSON") from exc

    watts, hint = parse_power_control(body, endpoint.prefer_average)
    return PowerSample(node=endpoint.node, watts=watts, timestamp=now, interval_hint=hint)


@dataclass(frozen=True)
class SimPowerModel:
    """Affine node power: ``static_floor + slope * cores`` seen ``lag`` seconds late."""

    static_floor: float
    slope: float
    lag: float = 0.0
    noise_sd: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not self.static_floor > 0:
            raise ValueError(f"static_floor must be > 0, got {self.static_floor!r}")
        if not self.slope >= 0:
            raise ValueError(f"slope must be >= 0, got {self.slope!r}")
        if not self.noise_sd >= 0:
            raise ValueError(f"noise_sd must be >= 0, got {self.noise_sd!r}")
        if not self.lag >= 0:
            raise ValueError(f"lag must be >= 0, got {self.lag!r}")


def sim_noise(model: SimPowerModel, node: str, now: float) -> float:
    """Gaussian noise that is a pure function of (seed, node, millisecond time)."""
    if model.noise_sd == 0:
        return 0.0
    rng = random.Random(f"{model.seed}:{node}:{round(now * 1000)}")
    return rng.gauss(0.0, model.noise_sd)


def poll_simulated(
    model: SimPowerModel,
    cluster_cpu_at: Callable[[float], float],
    now: float,
    node: NodeRef = "sim",
) -> PowerSample:
    cores = cluster_cpu_at(now - model.lag)
    watts = model.static_floor + model.slope * cores + sim_noise(model, node, now)
    return PowerSample(
        node=node,
        watts=max(watts, 0.0),
        timestamp=now,
        interval_hint=model.lag or None,
    )


class SimulatedPowerCollector:
    def __init__(self, node: NodeRef, model: SimPowerModel, cluster_cpu_at, clock):
        self.node = node
        self.model = model
        self._cpu_at = cluster_cpu_at
        self._clock = clock

    def poll(self) -> PowerSample:
        return poll_simulated(self.model, self._cpu_at, self._clock.now(), self.node)
