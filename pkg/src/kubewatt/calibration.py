"""Static power calibration: base (idle averaging) and bootstrap (regression).

Base initialization averages node power over a fixed window on a cluster
running nothing but its control plane. Bootstrap initialization works on a
busy cluster: it collects (node CPU fraction, watts) pairs in rounds until the
CPU distribution is spread evenly enough across the bucket range, fits a line
to the pairs below the regression cutoff and evaluates it at the average
control-plane CPU.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

from .clock import Clock
from .errors import (
    ClusterNotEmpty,
    CollectorError,
    DegenerateData,
    InsufficientSamples,
    MaxRoundsExceeded,
    NegativeIntercept,
)
from .k8s import MetricsSource, classify_control_plane, control_plane_cpu
from .model import (
    DEFAULT_SKEW_BOUND,
    ControlPlaneMatcher,
    CpuHistory,
    NodeRef,
    Provenance,
    StaticPowerProfile,
)
from .power import PowerCollector

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class BaseInitConfig:
    duration: float = 300.0
    cadence: float = 15.0

    def __post_init__(self):
        if not self.cadence > 0 or self.duration < 2 * self.cadence:
            raise ValueError("base init duration must cover at least two cadences")

    @property
    def expected_samples(self) -> int:
        return int(self.duration // self.cadence)


@dataclass(frozen=True)
class BootstrapConfig:
    window: float = 1800.0
    cadence: float = 15.0
    bucket_width: float = 0.10
    bucket_lo: float = 0.20
    bucket_hi: float = 0.80
    min_fill_factor: float = 0.5
    regression_cutoff: float = 0.50
    max_rounds: int = 16
    skew_bound: float = DEFAULT_SKEW_BOUND
    power_lag: float = 0.0

    def __post_init__(self):
        if not self.bucket_lo < self.bucket_hi:
            raise ValueError("bucket_lo must be below bucket_hi")
        if not 0 < self.bucket_width <= self.bucket_hi - self.bucket_lo + 1e-12:
            raise ValueError("bucket_width must be in (0, bucket_hi - bucket_lo]")
        if not 0 < self.min_fill_factor <= 1:
            raise ValueError("min_fill_factor must be in (0, 1]")
        if not 0 < self.regression_cutoff <= 1:
            raise ValueError("regression_cutoff must be in (0, 1]")
        if self.max_rounds < 1:
            raise ValueError("max_rounds must be >= 1")
        if not self.cadence > 0 or self.window < self.cadence:
            raise ValueError("window must cover at least one cadence")

    @property
    def bucket_count(self) -> int:
        # Rounded first so 0.6 / 0.1 counts as 6 buckets, not 5.999... or 6.000...1.
        return math.ceil(round((self.bucket_hi - self.bucket_lo) / self.bucket_width, 9))

    def bucket_index(self, frac: float) -> int | None:
        if not self.bucket_lo <= frac < self.bucket_hi:
            return None
        idx = math.floor(round((frac - self.bucket_lo) / self.bucket_width, 9))
        return min(idx, self.bucket_count - 1)


@dataclass(frozen=True)
class CalibrationSamplePair:
    node_cpu_frac: float
    watts: float
    control_plane_cpu: float
    timestamp: float

    def __post_init__(self):
        if not 0.0 <= self.node_cpu_frac <= 1.0:
            raise ValueError(f"node_cpu_frac must be in [0, 1], got {self.node_cpu_frac!r}")


@dataclass(frozen=True)
class RegressionFit:
    intercept: float
    slope: float
    r_squared: float
    n_points: int


@dataclass(frozen=True)
class BucketVerdict:
    passed: bool
    counts: tuple[int, ...]

    @property
    def largest(self) -> int:
        return max(self.counts, default=0)


@dataclass(frozen=True)
class StaticFit:
    fit: RegressionFit
    static_watts: float
    control_plane_watts: float
    provenance: Provenance = Provenance.BOOTSTRAP_INIT


def bucket_verdict(counts: Sequence[int], min_fill_factor: float) -> bool:
    """Every bucket non-empty and at least ``min_fill_factor`` of the largest."""
    if not counts:
        return False
    largest = max(counts)
    return all(c > 0 and c >= min_fill_factor * largest for c in counts)


def check_bucket_sufficiency(samples: Sequence[CalibrationSamplePair], cfg: BootstrapConfig) -> BucketVerdict:
    counts = [0] * cfg.bucket_count
    for s in samples:
        idx = cfg.bucket_index(s.node_cpu_frac)
        if idx is not None:
            counts[idx] += 1
    return BucketVerdict(bucket_verdict(counts, cfg.min_fill_factor), tuple(counts))


def ordinary_least_squares(xs: Sequence[float], ys: Sequence[float]) -> RegressionFit:
    n = len(xs)
    if n != len(ys):
        raise ValueError("xs and ys differ in length")
    if len(set(xs)) < 2:
        raise DegenerateData(f"need at least 2 distinct CPU levels, got {len(set(xs))}")
    mx = math.fsum(xs) / n
    my = math.fsum(ys) / n
    sxx = math.fsum((x - mx) ** 2 for x in xs)
    sxy = math.fsum((x - mx) * (y - my) for x, y in zip(xs, ys))
    slope = sxy / sxx
    intercept = my - slope * mx
    ss_tot = math.fsum((y - my) ** 2 for y in ys)
    ss_res = math.fsum((y - (intercept + slope * x)) ** 2 for x, y in zip(xs, ys))
    # Below this, sums of squares are rounding noise in the watts values themselves.
    noise_floor = 1e-24 * math.fsum(y * y for y in ys)
    if ss_tot <= noise_floor:
        r2 = 1.0 if ss_res <= noise_floor else 0.0
    else:
        r2 = min(max(1.0 - ss_res / ss_tot, 0.0), 1.0)
    return RegressionFit(intercept=intercept, slope=slope, r_squared=r2, n_points=n)


def fit_static_power(
    samples: Sequence[CalibrationSamplePair], cfg: BootstrapConfig, capacity_cores: float
) -> StaticFit:
    """Regress watts on CPU fraction below the cutoff; evaluate at mean control-plane CPU.

    The control-plane average is taken over all samples, the regression only
    over those with ``node_cpu_frac < cfg.regression_cutoff``.
    """
    if not capacity_cores > 0:
        raise ValueError("capacity_cores must be > 0")
    low = [s for s in samples if s.node_cpu_frac < cfg.regression_cutoff]
    if len({s.node_cpu_frac for s in low}) < 2:
        raise DegenerateData(
            f"{len(low)} samples below {cfg.regression_cutoff:.0%} CPU with "
            f"{len({s.node_cpu_frac for s in low})} distinct levels; need 2"
        )
    fit = ordinary_least_squares([s.node_cpu_frac for s in low], [s.watts for s in low])
    if fit.intercept <= 0:
        raise NegativeIntercept(fit.intercept)
    cp_frac = math.fsum(s.control_plane_cpu for s in samples) / len(samples) / capacity_cores
    contribution = fit.slope * cp_frac
    return StaticFit(fit=fit, static_watts=fit.intercept + contribution, control_plane_watts=contribution)


# --- collection jobs -------------------------------------------------------


def ensure_cluster_empty(metrics: MetricsSource, matcher: ControlPlaneMatcher) -> None:
    offending = []
    for sample in metrics.poll_container_cpu().values():
        _, workload = classify_control_plane(sample, matcher)
        offending.extend(sorted({f"{r.namespace}/{r.pod}" for r in workload}))
    if offending:
        raise ClusterNotEmpty(sorted(set(offending)))


def run_base_init(
    cfg: BaseInitConfig,
    power_collectors: Mapping[NodeRef, PowerCollector],
    metrics: MetricsSource,
    matcher: ControlPlaneMatcher,
    clock: Clock,
) -> StaticPowerProfile:
    ensure_cluster_empty(metrics, matcher)
    readings: dict[NodeRef, list[float]] = {node: [] for node in power_collectors}
    expected = cfg.expected_samples
    for i in range(expected):
        if i:
            clock.sleep(cfg.cadence)
        for node, collector in power_collectors.items():
            try:
                readings[node].append(collector.poll().watts)
            except CollectorError as exc:
                log.warning("base init: power poll for %s failed: %s", node, exc)

    static = {}
    for node, values in readings.items():
        if len(values) < 0.5 * expected:
            raise InsufficientSamples(node, len(values), expected)
        static[node] = math.fsum(values) / len(values)
        log.info("base init: %s static power %.3f W from %d samples", node, static[node], len(values))
    return StaticPowerProfile(static, Provenance.BASE_INIT, clock.now())


def run_bootstrap_init(
    cfg: BootstrapConfig,
    power_collectors: Mapping[NodeRef, PowerCollector],
    metrics: MetricsSource,
    matcher: ControlPlaneMatcher,
    clock: Clock,
) -> StaticPowerProfile:
    capacity = metrics.node_capacity()
    nodes = list(power_collectors)
    samples: dict[NodeRef, list[CalibrationSamplePair]] = {n: [] for n in nodes}
    history_len = max(8, int(math.ceil((cfg.power_lag + 2 * cfg.skew_bound) / cfg.cadence)) + 8)
    histories = {n: CpuHistory(history_len) for n in nodes}
    ticks_per_round = int(cfg.window // cfg.cadence)
    verdicts: dict[NodeRef, BucketVerdict] = {}
    first = True

    for round_no in range(1, cfg.max_rounds + 1):
        for _ in range(ticks_per_round):
            if not first:
                clock.sleep(cfg.cadence)
            first = False
            _collect_tick(cfg, power_collectors, metrics, matcher, capacity, histories, samples)

        verdicts = {n: check_bucket_sufficiency(samples[n], cfg) for n in nodes}
        log.info(
            "bootstrap round %d: %s",
            round_no,
            "; ".join(f"{n} {'ok' if v.passed else 'insufficient'} {list(v.counts)}" for n, v in verdicts.items()),
        )
        if all(v.passed for v in verdicts.values()):
            static = {}
            for n in nodes:
                result = fit_static_power(samples[n], cfg, capacity[n])
                log.info(
                    "bootstrap: %s intercept %.3f W, slope %.3f W/frac, r2 %.4f, control plane %.3f W",
                    n,
                    result.fit.intercept,
                    result.fit.slope,
                    result.fit.r_squared,
                    result.control_plane_watts,
                )
                static[n] = result.static_watts
            return StaticPowerProfile(static, Provenance.BOOTSTRAP_INIT, clock.now())

    partial = {}
    for n, v in verdicts.items():
        if v.passed:
            try:
                partial[n] = fit_static_power(samples[n], cfg, capacity[n]).static_watts
            except (DegenerateData, NegativeIntercept):
                pass
    failed = {n: list(v.counts) for n, v in verdicts.items() if not v.passed}
    raise MaxRoundsExceeded(cfg.max_rounds, failed, partial or None)


def _collect_tick(cfg, power_collectors, metrics, matcher, capacity, histories, samples) -> None:
    try:
        cpu_by_node = metrics.poll_container_cpu()
    except CollectorError as exc:
        log.warning("bootstrap: cpu poll failed: %s", exc)
        cpu_by_node = {}
    for node, sample in cpu_by_node.items():
        if node in histories:
            histories[node].add(sample)
    for node, collector in power_collectors.items():
        try:
            power = collector.poll()
        except CollectorError as exc:
            log.warning("bootstrap: power poll for %s failed: %s", node, exc)
            continue
        cpu = histories[node].nearest(power.timestamp - cfg.power_lag, cfg.skew_bound)
        if cpu is None:
            continue
        frac = min(max(cpu.node_cpu / capacity[node], 0.0), 1.0)
        samples[node].append(
            CalibrationSamplePair(
                node_cpu_frac=frac,
                watts=power.watts,
                control_plane_cpu=control_plane_cpu(cpu, matcher),
                timestamp=power.timestamp,
            )
        )
