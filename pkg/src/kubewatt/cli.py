"""``kubewatt`` command: mode dispatch and collector wiring.

Exit codes: 0 success, 1 runtime failure, 2 configuration error, 3 calibration failure.
"""

from __future__ import annotations

import logging
import signal
import sys
import threading
from contextlib import contextmanager
from typing import Optional, Sequence

import requests

from .calibration import run_base_init, run_bootstrap_init
from .clock import ScaledClock, VirtualClock, WallClock
from .config import Mode, RunConfig, build_parser, configure_logging, load_config
from .errors import CalibrationError, ConfigError, KubeWattError, OutOfRange, ScenarioError
from .estimator import EstimatorConfig, serve_metrics
from .k8s import K8sMetricsClient, SourceMode
from .model import ControlPlaneMatcher
from .power import RedfishPowerCollector
from .profile import profile_to_text, write_profile
from .simulator import ClusterScenario, Simulation, builtin_names, builtin_scenario, load_scenario, replay, write_trace

log = logging.getLogger("kubewatt")

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_CONFIG = 2
EXIT_CALIBRATION = 3


class Terminated(Exception):
    """Raised from the signal handler to abort a calibration job."""


def resolve_scenario(cfg: RunConfig) -> ClusterScenario:
    if cfg.scenario in builtin_names():
        return builtin_scenario(cfg.scenario, cfg.seed)
    scenario = load_scenario(cfg.scenario)
    return scenario if cfg.seed is None else scenario.with_seed(cfg.seed)


def _matcher(cfg: RunConfig, scenario: Optional[ClusterScenario]) -> ControlPlaneMatcher:
    if cfg.matcher.patterns or scenario is None:
        return cfg.matcher
    return ControlPlaneMatcher(scenario.control_plane_patterns())


def _live_collectors(cfg: RunConfig):
    session = requests.Session()
    power = {e.node: RedfishPowerCollector(e, session) for e in cfg.power_endpoints}
    return power, K8sMetricsClient(cfg.metrics, session)


@contextmanager
def _signals(handler):
    if threading.current_thread() is not threading.main_thread():
        yield
        return
    previous = {s: signal.signal(s, handler) for s in (signal.SIGINT, signal.SIGTERM)}
    try:
        yield
    finally:
        for s, h in previous.items():
            signal.signal(s, h)


def run_init(cfg: RunConfig) -> int:
    def abort(signum, frame):
        raise Terminated(signal.Signals(signum).name)

    scenario = resolve_scenario(cfg) if cfg.source is SourceMode.SIMULATED else None
    if scenario is not None:
        clock = VirtualClock(0.0)
        sim = Simulation(scenario)
        power, metrics = sim.power_collectors(clock), sim.metrics_source(clock, cfg.metrics.namespaces)
    else:
        clock = WallClock()
        power, metrics = _live_collectors(cfg)
    matcher = _matcher(cfg, scenario)

    try:
        with _signals(abort):
            if cfg.mode is Mode.INIT_BASE:
                profile = run_base_init(cfg.base_init, power, metrics, matcher, clock)
            else:
                profile = run_bootstrap_init(cfg.bootstrap, power, metrics, matcher, clock)
    except Terminated as exc:
        log.error("calibration aborted by %s; no profile written", exc)
        return EXIT_RUNTIME
    except (CalibrationError, OutOfRange) as exc:
        log.error("calibration failed: %s", exc)
        partial = getattr(exc, "partial", None)
        if partial:
            log.error("nodes that did pass (not written): %s", partial)
        return EXIT_CALIBRATION

    write_profile(profile, cfg.profile_path)
    sys.stdout.write(profile_to_text(profile))
    sys.stdout.flush()
    log.info("profile written to %s", cfg.profile_path)
    return EXIT_OK


def run_estimator(cfg: RunConfig, stop: Optional[threading.Event] = None, on_ready=None) -> int:
    stop = stop or threading.Event()

    def request_stop(signum, frame):
        log.info("received %s, shutting down", signal.Signals(signum).name)
        stop.set()

    est_cfg = EstimatorConfig(
        profile=cfg.profile,
        cadence=cfg.cadence,
        skew_bound=cfg.skew_bound,
        listen_address=cfg.listen,
        metric_prefix=cfg.metric_prefix,
        power_lag=cfg.power_lag,
    )
    scenario = resolve_scenario(cfg) if cfg.source is SourceMode.SIMULATED else None
    if scenario is not None:
        clock = ScaledClock(cfg.speedup, stop=stop)
        sim = Simulation(scenario)
        power, metrics = sim.power_collectors(clock), sim.metrics_source(clock, cfg.metrics.namespaces)
        power_interval = scenario.cadence
    else:
        clock = WallClock(stop)
        power, metrics = _live_collectors(cfg)
        power_interval = min(e.poll_interval for e in cfg.power_endpoints)

    with _signals(request_stop):
        serve_metrics(
            est_cfg,
            _matcher(cfg, scenario),
            power,
            metrics,
            clock=clock,
            stop=stop,
            power_interval=power_interval,
            metrics_interval=cfg.metrics.poll_interval,
            on_ready=on_ready,
        )
    return EXIT_OK


def run_replay(cfg: RunConfig) -> int:
    scenario = resolve_scenario(cfg)
    result = replay(
        scenario,
        speedup=cfg.speedup,
        profile=cfg.profile,
        matcher=cfg.matcher if cfg.matcher.patterns else None,
        cadence=cfg.cadence,
        skew_bound=cfg.skew_bound,
        power_lag=cfg.power_lag,
    )
    if cfg.trace_path:
        with open(cfg.trace_path, "w", newline="") as fh:
            write_trace(result, fh)
        log.info("replayed %s: %d ticks, trace written to %s", scenario.name, len(result.ticks), cfg.trace_path)
    else:
        write_trace(result, sys.stdout)
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None, env=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(env=env, cli=args)
    except ConfigError as exc:
        print(f"kubewatt: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    configure_logging(cfg.log_level)

    try:
        if cfg.mode in (Mode.INIT_BASE, Mode.INIT_BOOTSTRAP):
            return run_init(cfg)
        if cfg.mode is Mode.ESTIMATOR:
            return run_estimator(cfg)
        return run_replay(cfg)
    except ScenarioError as exc:
        print(f"kubewatt: scenario error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except KubeWattError as exc:
        log.error("%s", exc)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
