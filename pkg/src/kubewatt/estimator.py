"""Estimation mode: pair samples each tick, attribute power, serve text exposition."""

from __future__ import annotations

import logging
import math
import queue
import threading
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Callable, Iterable, Mapping, Optional

from .clock import Clock, WallClock
from .errors import BindFailed, CollectorError, OutOfRange, SampleSkew
from .model import (
    DEFAULT_SKEW_BOUND,
    AttributionRecord,
    ControlPlaneMatcher,
    CpuHistory,
    CpuSample,
    NodeRef,
    PowerSample,
    StaticPowerProfile,
    snapshot_attribution,
)

log = logging.getLogger(__name__)

CONTENT_TYPE = "text/plain; version=0.0.4; charset=utf-8"


@dataclass(frozen=True)
class EstimatorConfig:
    profile: StaticPowerProfile
    cadence: float = 15.0
    skew_bound: float = DEFAULT_SKEW_BOUND
    listen_address: str = "0.0.0.0:9880"
    metric_prefix: str = "kubewatt"
    # Known reporting delay of the power source; CPU is sampled this much earlier.
    power_lag: float = 0.0

    def __post_init__(self):
        if not self.profile.static_watts:
            raise ValueError("estimator profile has no nodes")
        if self.cadence < 1:
            raise ValueError(f"cadence must be >= 1s, got {self.cadence!r}")


def estimation_tick(
    now: float,
    latest_power: Mapping[NodeRef, PowerSample],
    cpu_history: Mapping[NodeRef, CpuHistory],
    cfg: EstimatorConfig,
    matcher: ControlPlaneMatcher,
) -> tuple[dict[NodeRef, AttributionRecord], list[NodeRef]]:
    """Attribution records for every profiled node that has a usable sample pair.

    Returns ``(records, stale_nodes)``. A node is stale when its power reading
    is older than the skew bound or no CPU sample lies within the bound of it.
    """
    records, stale = {}, []
    for node in sorted(cfg.profile.static_watts):
        power = latest_power.get(node)
        history = cpu_history.get(node)
        if power is None or history is None or now - power.timestamp > cfg.skew_bound:
            stale.append(node)
            continue
        cpu = history.nearest(power.timestamp - cfg.power_lag, cfg.skew_bound)
        if cpu is None:
            stale.append(node)
            continue
        try:
            records[node] = snapshot_attribution(
                power, cpu, cfg.profile, matcher, cfg.skew_bound, cfg.power_lag
            )
        except SampleSkew:
            stale.append(node)
    return records, stale


class Estimator:
    """Accumulates samples and produces one set of records per tick."""

    def __init__(self, cfg: EstimatorConfig, matcher: ControlPlaneMatcher):
        self.cfg = cfg
        self.matcher = matcher
        self.latest_power: dict[NodeRef, PowerSample] = {}
        history_len = max(8, int(math.ceil((cfg.power_lag + 2 * cfg.skew_bound) / cfg.cadence)) + 8)
        self.cpu_history: dict[NodeRef, CpuHistory] = {
            node: CpuHistory(history_len) for node in cfg.profile.static_watts
        }
        self.stale_counts: dict[NodeRef, int] = {node: 0 for node in cfg.profile.static_watts}
        self._unprofiled: set[NodeRef] = set()

    def observe_power(self, sample: PowerSample) -> None:
        if sample.node not in self.cpu_history:
            self._warn_unprofiled(sample.node)
            return
        self.latest_power[sample.node] = sample

    def observe_cpu(self, sample: CpuSample) -> None:
        history = self.cpu_history.get(sample.node)
        if history is None:
            self._warn_unprofiled(sample.node)
            return
        history.add(sample)

    def _warn_unprofiled(self, node: NodeRef) -> None:
        if node not in self._unprofiled:
            self._unprofiled.add(node)
            log.warning("node %s reports data but has no static power profile; ignoring it", node)

    def tick(self, now: float) -> dict[NodeRef, AttributionRecord]:
        records, stale = estimation_tick(now, self.latest_power, self.cpu_history, self.cfg, self.matcher)
        for node in stale:
            self.stale_counts[node] += 1
        return records


# --- exposition ------------------------------------------------------------


def _escape(value: str) -> str:
    return value.replace("\\", "\\\\").replace("\n", "\\n").replace('"', '\\"')


def _labels(pairs: Iterable[tuple[str, str]]) -> str:
    return "{" + ",".join(f'{k}="{_escape(v)}"' for k, v in pairs) + "}"


def _value(v: float) -> str:
    if isinstance(v, int) and not isinstance(v, bool):
        return str(v)
    v = float(v) + 0.0  # normalizes -0.0
    if math.isnan(v):
        return "NaN"
    if math.isinf(v):
        return "+Inf" if v > 0 else "-Inf"
    return repr(v)


_NODE_GAUGES = (
    ("node_watts", "Measured node platform power in watts.", lambda r: r.node_watts),
    ("node_static_watts", "Calibrated static node power in watts, not attributed to containers.", lambda r: r.static_watts),
    ("node_dynamic_watts", "Node power above static power in watts.", lambda r: r.dynamic_watts),
    ("node_residual_watts", "Signed shortfall of measured power below static power in watts.", lambda r: r.residual_watts),
    ("unattributed_watts", "Dynamic power with no CPU-consuming workload container to attribute it to.", lambda r: r.unattributed_watts),
)


def render_exposition(
    records: Mapping[NodeRef, AttributionRecord],
    stale_counts: Mapping[NodeRef, int],
    prefix: str = "kubewatt",
) -> str:
    """Render records and counters in the 0.0.4 text exposition format.

    Series are sorted by label values so identical input gives identical bytes.
    """
    lines = []
    name = f"{prefix}_container_watts"
    lines.append(f"# HELP {name} Dynamic power attributed to a container in watts.")
    lines.append(f"# TYPE {name} gauge")
    series = []
    for node in sorted(records):
        for ref, watts in records[node].per_container.items():
            series.append(((ref.node, ref.namespace, ref.pod, ref.container), watts))
    for (node, ns, pod, container), watts in sorted(series):
        labels = _labels([("node", node), ("namespace", ns), ("pod", pod), ("container", container)])
        lines.append(f"{name}{labels} {_value(watts)}")

    for suffix, help_text, getter in _NODE_GAUGES:
        name = f"{prefix}_{suffix}"
        lines.append(f"# HELP {name} {help_text}")
        lines.append(f"# TYPE {name} gauge")
        for node in sorted(records):
            lines.append(f"{name}{_labels([('node', node)])} {_value(getter(records[node]))}")

    name = f"{prefix}_stale_samples_total"
    lines.append(f"# HELP {name} Ticks skipped because power and CPU samples could not be paired.")
    lines.append(f"# TYPE {name} counter")
    for node in sorted(stale_counts):
        lines.append(f"{name}{_labels([('node', node)])} {_value(stale_counts[node])}")
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class Snapshot:
    records: Mapping[NodeRef, AttributionRecord]
    stale_counts: Mapping[NodeRef, int]
    text: str


class MetricsState:
    """Holds the latest rendered snapshot; publishing replaces it in one assignment."""

    def __init__(self, prefix: str = "kubewatt", nodes: Iterable[NodeRef] = ()):
        self.prefix = prefix
        counts = {n: 0 for n in nodes}
        self._snapshot = Snapshot({}, counts, render_exposition({}, counts, prefix))

    @property
    def snapshot(self) -> Snapshot:
        return self._snapshot

    def publish(self, records: Mapping[NodeRef, AttributionRecord], stale_counts: Mapping[NodeRef, int]) -> Snapshot:
        records = dict(records)
        counts = dict(stale_counts)
        snap = Snapshot(records, counts, render_exposition(records, counts, self.prefix))
        self._snapshot = snap
        return snap


# --- HTTP ------------------------------------------------------------------


def parse_listen_address(address: str) -> tuple[str, int]:
    host, sep, port = address.rpartition(":")
    if not sep or not port.isdigit():
        raise ValueError(f"listen address must be host:port, got {address!r}")
    return (host.strip("[]") or "0.0.0.0"), int(port)


class _Handler(BaseHTTPRequestHandler):
    server: "MetricsServer"

    def do_GET(self):
        path = self.path.split("?", 1)[0]
        if path != "/metrics":
            self.send_error(404)
            return
        body = self.server.state.snapshot.text.encode("utf-8")
        self.send_response(200)
        self.send_header("Content-Type", CONTENT_TYPE)
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def log_message(self, fmt, *args):
        log.debug("scrape %s - " + fmt, self.address_string(), *args)


class MetricsServer(ThreadingHTTPServer):
    daemon_threads = True

    def __init__(self, state: MetricsState, address: str):
        self.state = state
        host, port = parse_listen_address(address)
        try:
            super().__init__((host, port), _Handler)
        except OSError as exc:
            raise BindFailed(f"cannot listen on {address}: {exc}") from exc
        self._thread: Optional[threading.Thread] = None

    @property
    def port(self) -> int:
        return self.server_address[1]

    def start(self) -> "MetricsServer":
        self._thread = threading.Thread(target=self.serve_forever, name="metrics-http", daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self.shutdown()
        self.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)


# --- service loop ----------------------------------------------------------


def _poll_loop(poll: Callable, kind: str, interval: float, out: queue.Queue, clock: Clock, stop: threading.Event):
    while not stop.is_set():
        try:
            out.put((kind, poll()))
        except OutOfRange:
            log.info("simulated scenario finished; stopping")
            stop.set()
            return
        except CollectorError as exc:
            log.warning("%s poll failed: %s", kind, exc)
        except Exception:
            log.exception("%s collector crashed; continuing", kind)
        clock.sleep(interval)


def serve_metrics(
    cfg: EstimatorConfig,
    matcher: ControlPlaneMatcher,
    power_collectors: Mapping[NodeRef, object],
    metrics_source,
    clock: Optional[Clock] = None,
    stop: Optional[threading.Event] = None,
    power_interval: float = 15.0,
    metrics_interval: float = 15.0,
    on_ready: Optional[Callable[[MetricsServer], None]] = None,
) -> None:
    """Run collectors, the estimation loop and the metrics endpoint until ``stop`` is set."""
    stop = stop or threading.Event()
    clock = clock or WallClock(stop)
    state = MetricsState(cfg.metric_prefix, cfg.profile.static_watts)
    server = MetricsServer(state, cfg.listen_address).start()
    estimator = Estimator(cfg, matcher)
    samples: queue.Queue = queue.Queue()

    def poll_cpu():
        return list(metrics_source.poll_container_cpu().values())

    threads = [
        threading.Thread(
            target=_poll_loop,
            args=(c.poll, f"power:{node}", power_interval, samples, clock, stop),
            name=f"power-{node}",
            daemon=True,
        )
        for node, c in power_collectors.items()
    ]
    threads.append(
        threading.Thread(
            target=_poll_loop, args=(poll_cpu, "cpu", metrics_interval, samples, clock, stop), name="cpu", daemon=True
        )
    )
    for t in threads:
        t.start()
    log.info("serving metrics on %s", cfg.listen_address)
    if on_ready:
        on_ready(server)
    try:
        while not stop.is_set():
            clock.sleep(cfg.cadence)
            while True:
                try:
                    kind, payload = samples.get_nowait()
                except queue.Empty:
                    break
                if kind == "cpu":
                    for sample in payload:
                        estimator.observe_cpu(sample)
                else:
                    estimator.observe_power(payload)
            records = estimator.tick(clock.now())
            state.publish(records, estimator.stale_counts)
    finally:
        stop.set()
        server.stop()
        for t in threads:
            t.join(timeout=5)
