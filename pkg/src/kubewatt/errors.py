"""Exception hierarchy shared by all kubewatt modules."""

from __future__ import annotations


class KubeWattError(Exception):
    """Base class for every error raised by kubewatt."""


# --- attribution ---------------------------------------------------------


class MissingProfile(KubeWattError):
    """A node has power or CPU data but no calibrated static power."""

    def __init__(self, node: str):
        super().__init__(f"node {node!r} has no static power profile; run an init mode first")
        self.node = node


class SampleSkew(KubeWattError):
    """Power and CPU samples are too far apart in time to be paired."""

    def __init__(self, skew: float, bound: float):
        super().__init__(f"power/cpu sample skew {skew:.3f}s exceeds bound {bound:.3f}s")
        self.skew = skew
        self.bound = bound


# --- collectors ----------------------------------------------------------


class CollectorError(KubeWattError):
    """A poll failed; no sample was produced."""


class Unreachable(CollectorError):
    pass


class AuthFailed(CollectorError):
    pass


class SchemaMismatch(CollectorError):
    pass


class EmptyResponse(CollectorError):
    pass


# --- calibration ---------------------------------------------------------


class CalibrationError(KubeWattError):
    """Calibration could not produce a static power profile."""


class ClusterNotEmpty(CalibrationError):
    def __init__(self, pods: list[str]):
        shown = ", ".join(pods[:10]) + (" ..." if len(pods) > 10 else "")
        super().__init__(
            f"base init requires an empty cluster; non-control-plane pods running: {shown}"
        )
        self.pods = pods


class InsufficientSamples(CalibrationError):
    def __init__(self, node: str, got: int, expected: int):
        super().__init__(f"node {node!r}: collected {got} power samples, expected ~{expected}")
        self.node = node
        self.got = got
        self.expected = expected


class DegenerateData(CalibrationError):
    pass


class NegativeIntercept(CalibrationError):
    def __init__(self, intercept: float):
        super().__init__(
            f"regression intercept {intercept:.3f} W is not positive; check the power source"
        )
        self.intercept = intercept


class MaxRoundsExceeded(CalibrationError):
    """Bucket sufficiency never passed; ``counts`` holds the final per-node bucket counts."""

    def __init__(self, rounds: int, counts: dict[str, list[int]], partial=None):
        detail = "; ".join(f"{node}: {c}" for node, c in sorted(counts.items()))
        super().__init__(f"CPU distribution insufficient after {rounds} rounds ({detail})")
        self.rounds = rounds
        self.counts = counts
        self.partial = partial


# --- simulator -----------------------------------------------------------


class ScenarioError(KubeWattError):
    """Malformed scenario definition."""


class OutOfRange(KubeWattError):
    """Requested simulation time lies outside the scenario."""


# --- configuration / serving ---------------------------------------------


class ConfigError(KubeWattError):
    pass


class ParseError(ConfigError):
    pass


class ValidationError(ConfigError):
    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


class BindFailed(KubeWattError):
    pass
