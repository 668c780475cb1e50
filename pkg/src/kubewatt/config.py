"""Run configuration: YAML file, ``KUBEWATT_*`` environment variables and CLI flags.

Every scalar setting has one dotted key (``bootstrap.max_rounds``), one flag
(``--bootstrap-max-rounds``) and one environment variable
(``KUBEWATT_BOOTSTRAP_MAX_ROUNDS``). Precedence is CLI > environment > file >
default. Redfish endpoints are a list and can only be given in the file;
their credentials can be overridden from the environment.
"""

from __future__ import annotations

import argparse
import enum
import logging
import os
from dataclasses import dataclass
from typing import Any, Callable, Mapping, Optional, Sequence

import yaml

from .calibration import BaseInitConfig, BootstrapConfig
from .errors import ConfigError, ParseError, ValidationError
from .k8s import MetricsSourceConfig, SourceMode
from .model import ControlPlaneMatcher, StaticPowerProfile
from .power import DEFAULT_CHASSIS_PATH, PowerCollectorEndpoint
from .profile import read_profile
from .units import parse_duration

ENV_PREFIX = "KUBEWATT_"
ENV_REDFISH_USERNAME = "KUBEWATT_REDFISH_USERNAME"
ENV_REDFISH_PASSWORD = "KUBEWATT_REDFISH_PASSWORD"
ENV_K8S_TOKEN = "KUBEWATT_K8S_TOKEN"


class Mode(str, enum.Enum):
    INIT_BASE = "INIT_BASE"
    INIT_BOOTSTRAP = "INIT_BOOTSTRAP"
    ESTIMATOR = "ESTIMATOR"
    REPLAY = "REPLAY"


def _bool(value) -> bool:
    if isinstance(value, bool):
        return value
    text = str(value).strip().lower()
    if text in ("1", "true", "yes", "on"):
        return True
    if text in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {value!r}")


def _str_list(value) -> list[str]:
    if value is None:
        return []
    if isinstance(value, str):
        return [v.strip() for v in value.split(",") if v.strip()]
    if isinstance(value, (list, tuple)):
        return [str(v) for v in value]
    raise ValueError(f"expected a list, got {value!r}")


def _upper(value) -> str:
    return str(value).strip().upper()


@dataclass(frozen=True)
class Option:
    key: str
    convert: Callable[[Any], Any]
    default: Any
    help: str
    metavar: str = "VALUE"
    repeat: bool = False
    flag_name: Optional[str] = None

    @property
    def flag(self) -> str:
        return "--" + (self.flag_name or self.key.replace(".", "-").replace("_", "-"))

    @property
    def env(self) -> str:
        return ENV_PREFIX + self.key.replace(".", "_").upper()

    @property
    def dest(self) -> str:
        return self.key.replace(".", "__")


_b, _i = BaseInitConfig(), BootstrapConfig()

OPTIONS: tuple[Option, ...] = (
    Option("mode", _upper, None, "INIT_BASE, INIT_BOOTSTRAP, ESTIMATOR or REPLAY", "MODE"),
    Option("source", _upper, None, "LIVE or SIMULATED (default: SIMULATED when a scenario is set)", "SOURCE"),
    Option("scenario", str, None, "builtin scenario name or path to a scenario file", "NAME|PATH"),
    Option("seed", int, None, "override the scenario seed", "N"),
    Option("speedup", float, 100.0, "virtual seconds per wall second for a simulated estimator", "X"),
    Option(
        "profile_path",
        str,
        "kubewatt-profile.yaml",
        "static power profile path (written by init, read by estimator)",
        "PATH",
        flag_name="profile",
    ),
    Option("listen", str, "0.0.0.0:9880", "metrics endpoint address", "HOST:PORT"),
    Option("log_level", _upper, "INFO", "DEBUG, INFO, WARNING or ERROR", "LEVEL"),
    Option("trace_path", str, None, "REPLAY: CSV trace output path (default stdout)", "PATH", flag_name="trace"),
    Option("control_plane", _str_list, [], "full-match regex of control-plane pod names (repeatable)", "REGEX", True),
    Option("cadence", parse_duration, 15.0, "estimation tick interval", "DURATION"),
    Option("skew_bound", parse_duration, 30.0, "max power/cpu sample time difference", "DURATION"),
    Option("power_lag", parse_duration, 0.0, "known power-reading delay; cpu is paired this much earlier", "DURATION"),
    Option("metric_prefix", str, "kubewatt", "prefix of exported metric names", "PREFIX"),
    Option("metrics.api_base", str, "https://kubernetes.default.svc", "Kubernetes API server URL", "URL"),
    Option("metrics.namespaces", _str_list, None, "comma-separated namespace allowlist", "NS,..."),
    Option("metrics.poll_interval", parse_duration, 15.0, "metrics API poll interval", "DURATION"),
    Option("metrics.token_path", str, MetricsSourceConfig.token_path, "service-account token file", "PATH"),
    Option("metrics.ca_path", str, MetricsSourceConfig.ca_path, "API server CA bundle", "PATH"),
    Option("metrics.tls_verify", _bool, True, "verify the API server certificate", "BOOL"),
    Option("base_init.duration", parse_duration, _b.duration, "base init sampling period", "DURATION"),
    Option("base_init.cadence", parse_duration, _b.cadence, "base init sampling interval", "DURATION"),
    Option("bootstrap.window", parse_duration, _i.window, "bootstrap collection round length", "DURATION"),
    Option("bootstrap.cadence", parse_duration, _i.cadence, "bootstrap sampling interval", "DURATION"),
    Option("bootstrap.bucket_width", float, _i.bucket_width, "bucket width as a CPU fraction", "FRAC"),
    Option("bootstrap.bucket_lo", float, _i.bucket_lo, "lower edge of the bucketed CPU range", "FRAC"),
    Option("bootstrap.bucket_hi", float, _i.bucket_hi, "upper edge of the bucketed CPU range", "FRAC"),
    Option("bootstrap.min_fill_factor", float, _i.min_fill_factor, "min bucket size relative to the largest", "FRAC"),
    Option("bootstrap.regression_cutoff", float, _i.regression_cutoff, "regress only below this CPU fraction", "FRAC"),
    Option("bootstrap.max_rounds", int, _i.max_rounds, "give up after this many rounds", "N"),
)

OPTIONS_BY_KEY = {o.key: o for o in OPTIONS}


@dataclass(frozen=True)
class RunConfig:
    mode: Mode
    source: SourceMode
    power_endpoints: tuple[PowerCollectorEndpoint, ...]
    metrics: MetricsSourceConfig
    matcher: ControlPlaneMatcher
    profile_path: str
    scenario: Optional[str]
    seed: Optional[int]
    speedup: float
    listen: str
    log_level: str
    cadence: float
    skew_bound: float
    power_lag: float
    metric_prefix: str
    trace_path: Optional[str]
    base_init: BaseInitConfig
    bootstrap: BootstrapConfig
    profile: Optional[StaticPowerProfile] = None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kubewatt",
        description="Container power attribution: calibrate static power, estimate per-container watts, replay simulations.",
    )
    parser.add_argument("--config", metavar="PATH", help="YAML configuration file")
    for opt in OPTIONS:
        if opt.repeat:
            parser.add_argument(opt.flag, dest=opt.dest, action="append", metavar=opt.metavar, help=opt.help)
        else:
            parser.add_argument(opt.flag, dest=opt.dest, metavar=opt.metavar, help=opt.help)
    return parser


def _flatten(doc: Mapping, prefix: str = "") -> dict[str, Any]:
    flat = {}
    for k, v in doc.items():
        key = f"{prefix}{k}"
        if isinstance(v, Mapping) and key in ("metrics", "base_init", "bootstrap"):
            flat.update(_flatten(v, key + "."))
        else:
            flat[key] = v
    return flat


def _read_file(path: str) -> dict[str, Any]:
    try:
        with open(path) as fh:
            doc = yaml.safe_load(fh) or {}
    except OSError as exc:
        raise ParseError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ParseError(f"{path}: configuration must be a mapping")
    return doc


def _resolve(
    file_values: Mapping[str, Any], env: Mapping[str, str], cli: argparse.Namespace
) -> tuple[dict[str, Any], set[str]]:
    """Effective value per key, plus the keys that were set explicitly somewhere."""
    values, explicit = {}, set()
    for opt in OPTIONS:
        raw, origin = opt.default, None
        if opt.key in file_values:
            raw, origin = file_values[opt.key], "file"
        if opt.env in env:
            raw, origin = env[opt.env], "env"
        cli_value = getattr(cli, opt.dest, None)
        if cli_value is not None:
            raw, origin = cli_value, "cli"
        if origin is not None:
            explicit.add(opt.key)
        if raw is None:
            values[opt.key] = None
            continue
        try:
            values[opt.key] = opt.convert(raw)
        except (TypeError, ValueError) as exc:
            raise ValidationError(opt.key, f"invalid value {raw!r} from {origin or 'default'}: {exc}") from None
    return values, explicit


def _endpoints(raw, env: Mapping[str, str]) -> tuple[PowerCollectorEndpoint, ...]:
    if raw is None:
        return ()
    if not isinstance(raw, list):
        raise ValidationError("power_endpoints", "must be a list of endpoint mappings")
    out = []
    for i, item in enumerate(raw):
        key = f"power_endpoints[{i}]"
        if not isinstance(item, Mapping):
            raise ValidationError(key, "must be a mapping")
        username = env.get(ENV_REDFISH_USERNAME, item.get("username", ""))
        password = item.get("password", "")
        if item.get("password_env"):
            password = env.get(str(item["password_env"]), password)
        password = env.get(ENV_REDFISH_PASSWORD, password)
        try:
            out.append(
                PowerCollectorEndpoint(
                    node=str(item["node"]),
                    base_url=str(item["base_url"]),
                    username=str(username),
                    password=str(password),
                    chassis_path=str(item.get("chassis_path", DEFAULT_CHASSIS_PATH)),
                    poll_interval=parse_duration(item.get("poll_interval", 15)),
                    tls_verify=_bool(item.get("tls_verify", True)),
                    prefer_average=_bool(item.get("prefer_average", True)),
                )
            )
        except KeyError as exc:
            raise ValidationError(key, f"missing required field {exc.args[0]!r}") from None
        except (TypeError, ValueError) as exc:
            raise ValidationError(key, str(exc)) from None
    nodes = [e.node for e in out]
    if len(set(nodes)) != len(nodes):
        raise ValidationError("power_endpoints", "each node may have only one endpoint")
    return tuple(out)


def _scenario_exists(name: str) -> bool:
    from .simulator.catalog import builtin_names

    return name in builtin_names() or os.path.isfile(name)


def load_config(
    path: Optional[str] = None,
    env: Optional[Mapping[str, str]] = None,
    argv: Optional[Sequence[str]] = None,
    cli: Optional[argparse.Namespace] = None,
) -> RunConfig:
    """Merge file, environment and CLI into a validated :class:`RunConfig`."""
    env = dict(os.environ if env is None else env)
    if cli is None:
        cli = build_parser().parse_args(list(argv or []))
    path = path or getattr(cli, "config", None) or env.get(ENV_PREFIX + "CONFIG")
    doc = _read_file(path) if path else {}
    unknown = set(_flatten(doc)) - set(OPTIONS_BY_KEY) - {"power_endpoints"}
    if unknown:
        raise ValidationError(sorted(unknown)[0], "unknown configuration key")

    v, explicit = _resolve(_flatten(doc), env, cli)

    if v["mode"] is None:
        raise ValidationError("mode", "no operation mode set; use --mode INIT_BASE|INIT_BOOTSTRAP|ESTIMATOR|REPLAY")
    try:
        mode = Mode(v["mode"])
    except ValueError:
        raise ValidationError("mode", f"unknown mode {v['mode']!r}") from None

    if v["source"] is None:
        source = SourceMode.SIMULATED if v["scenario"] else SourceMode.LIVE
    else:
        try:
            source = SourceMode(v["source"])
        except ValueError:
            raise ValidationError("source", f"unknown source {v['source']!r}; use LIVE or SIMULATED") from None

    if v["log_level"] not in ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"):
        raise ValidationError("log_level", f"unknown level {v['log_level']!r}")
    if v["speedup"] < 1:
        raise ValidationError("speedup", "must be >= 1")
    for key in ("cadence", "metrics.poll_interval"):
        if v[key] < 1:
            raise ValidationError(key, "must be at least 1s")

    try:
        matcher = ControlPlaneMatcher(v["control_plane"])
    except ValueError as exc:
        raise ValidationError("control_plane", str(exc)) from None

    try:
        base_init = BaseInitConfig(duration=v["base_init.duration"], cadence=v["base_init.cadence"])
    except ValueError as exc:
        raise ValidationError("base_init", str(exc)) from None
    try:
        bootstrap = BootstrapConfig(
            window=v["bootstrap.window"],
            cadence=v["bootstrap.cadence"],
            bucket_width=v["bootstrap.bucket_width"],
            bucket_lo=v["bootstrap.bucket_lo"],
            bucket_hi=v["bootstrap.bucket_hi"],
            min_fill_factor=v["bootstrap.min_fill_factor"],
            regression_cutoff=v["bootstrap.regression_cutoff"],
            max_rounds=v["bootstrap.max_rounds"],
            skew_bound=v["skew_bound"],
            power_lag=v["power_lag"],
        )
    except ValueError as exc:
        raise ValidationError("bootstrap", str(exc)) from None

    metrics = MetricsSourceConfig(
        mode=source,
        api_base=v["metrics.api_base"],
        namespaces=tuple(v["metrics.namespaces"]) if v["metrics.namespaces"] else None,
        poll_interval=v["metrics.poll_interval"],
        token=env.get(ENV_K8S_TOKEN),
        token_path=v["metrics.token_path"],
        ca_path=v["metrics.ca_path"],
        tls_verify=v["metrics.tls_verify"],
    )
    endpoints = _endpoints(doc.get("power_endpoints"), env)

    scenario = v["scenario"]
    if scenario is not None and not _scenario_exists(scenario):
        raise ValidationError("scenario", f"{scenario!r} is neither a builtin scenario nor a readable file")
    if source is SourceMode.SIMULATED and scenario is None:
        raise ValidationError("scenario", "SIMULATED source needs a scenario")

    profile = None
    if mode in (Mode.INIT_BASE, Mode.INIT_BOOTSTRAP):
        if source is SourceMode.LIVE and not endpoints:
            raise ValidationError("power_endpoints", f"{mode.value} with a LIVE source needs Redfish endpoints")
        if mode is Mode.INIT_BASE and not matcher.patterns:
            raise ValidationError(
                "control_plane", "INIT_BASE needs control-plane patterns to check that the cluster is empty"
            )
    elif mode is Mode.ESTIMATOR:
        profile = _load_profile(v["profile_path"], required=True)
        if source is SourceMode.LIVE and not endpoints:
            raise ValidationError("power_endpoints", "ESTIMATOR with a LIVE source needs Redfish endpoints")
    elif mode is Mode.REPLAY:
        if scenario is None:
            raise ValidationError("scenario", "REPLAY needs a scenario")
        if "profile_path" in explicit:
            profile = _load_profile(v["profile_path"], required=True)

    return RunConfig(
        mode=mode,
        source=source,
        power_endpoints=endpoints,
        metrics=metrics,
        matcher=matcher,
        profile_path=v["profile_path"],
        scenario=scenario,
        seed=v["seed"],
        speedup=v["speedup"],
        listen=v["listen"],
        log_level=v["log_level"],
        cadence=v["cadence"],
        skew_bound=v["skew_bound"],
        power_lag=v["power_lag"],
        metric_prefix=v["metric_prefix"],
        trace_path=v["trace_path"],
        base_init=base_init,
        bootstrap=bootstrap,
        profile=profile,
    )


def _load_profile(path: str, required: bool) -> Optional[StaticPowerProfile]:
    if not os.path.isfile(path):
        if not required:
            return None
        raise ValidationError(
            "profile_path", f"no static power profile at {path!r}; run INIT_BASE or INIT_BOOTSTRAP first to create it"
        )
    try:
        return read_profile(path)
    except (OSError, ConfigError) as exc:
        raise ValidationError("profile_path", f"unreadable profile {path!r}: {exc}") from None


def configure_logging(level: str) -> None:
    logging.basicConfig(
        level=getattr(logging, level, logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
