import math
import random

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from kubewatt.calibration import (
    BaseInitConfig,
    BootstrapConfig,
    CalibrationSamplePair,
    bucket_verdict,
    check_bucket_sufficiency,
    fit_static_power,
    ordinary_least_squares,
    run_base_init,
    run_bootstrap_init,
)
from kubewatt.clock import VirtualClock
from kubewatt.errors import (
    ClusterNotEmpty,
    DegenerateData,
    InsufficientSamples,
    MaxRoundsExceeded,
    NegativeIntercept,
    Unreachable,
)
from kubewatt.model import ContainerRef, ControlPlaneMatcher, CpuSample, PowerSample, Provenance
from kubewatt.simulator import Simulation, builtin_scenario

CFG = BootstrapConfig()


def pair(frac, watts, cp=0.1, t=0.0):
    return CalibrationSamplePair(node_cpu_frac=frac, watts=watts, control_plane_cpu=cp, timestamp=t)


def samples_with_counts(counts, cfg=CFG):
    out = []
    for i, n in enumerate(counts):
        centre = cfg.bucket_lo + (i + 0.5) * cfg.bucket_width
        out.extend(pair(centre, 200.0) for _ in range(n))
    return out


# --- sufficiency ----------------------------------------------------------


def brute_force_verdict(counts, factor):
    """The rule spelled out directly: every bucket non-empty and no bucket below factor * largest."""
    if len(counts) == 0:
        return False
    largest = 0
    for c in counts:
        if c > largest:
            largest = c
    for c in counts:
        if c == 0:
            return False
        if c < factor * largest:
            return False
    return True


class TestBuckets:
    def test_config_geometry(self):
        assert CFG.bucket_count == 6
        assert CFG.bucket_index(0.2) == 0
        assert CFG.bucket_index(0.3) == 1
        assert CFG.bucket_index(0.7999) == 5
        assert CFG.bucket_index(0.8) is None
        assert CFG.bucket_index(0.1999) is None

    def test_pass_example(self):
        assert bucket_verdict([10, 8, 6, 5, 9, 7], 0.5)
        assert check_bucket_sufficiency(samples_with_counts([10, 8, 6, 5, 9, 7]), CFG).passed

    def test_fail_example(self):
        assert not bucket_verdict([10, 4, 6, 5, 9, 7], 0.5)
        verdict = check_bucket_sufficiency(samples_with_counts([10, 4, 6, 5, 9, 7]), CFG)
        assert not verdict.passed and verdict.counts == (10, 4, 6, 5, 9, 7)

    def test_all_below_range(self):
        verdict = check_bucket_sufficiency([pair(0.05, 200.0) for _ in range(50)], CFG)
        assert not verdict.passed and verdict.counts == (0,) * 6

    def test_edges(self):
        assert not bucket_verdict([], 0.5)
        assert not bucket_verdict([0], 0.5)
        assert bucket_verdict([1], 0.5)
        assert not bucket_verdict([0, 0, 0], 1.0)

    @given(st.lists(st.integers(0, 40), min_size=1, max_size=8), st.floats(0.01, 1.0))
    def test_matches_brute_force(self, counts, factor):
        assert bucket_verdict(counts, factor) == brute_force_verdict(counts, factor)

    @given(st.lists(st.integers(0, 12), min_size=6, max_size=6), st.randoms(use_true_random=False))
    def test_order_and_duplication_invariant(self, counts, rnd):
        samples = samples_with_counts(counts)
        verdict = check_bucket_sufficiency(samples, CFG).passed
        shuffled = list(samples)
        rnd.shuffle(shuffled)
        assert check_bucket_sufficiency(shuffled, CFG).passed == verdict
        assert check_bucket_sufficiency(samples + samples, CFG).passed == verdict

    @given(st.lists(st.integers(1, 12), min_size=6, max_size=6))
    def test_targeted_fill_keeps_pass(self, counts):
        samples = samples_with_counts(counts)
        if not check_bucket_sufficiency(samples, CFG).passed:
            return
        smallest = counts.index(min(counts))
        extra = samples_with_counts([1 if i == smallest else 0 for i in range(6)])
        assert check_bucket_sufficiency(samples + extra, CFG).passed

    @pytest.mark.parametrize(
        "kw",
        [
            dict(bucket_lo=0.8, bucket_hi=0.2),
            dict(bucket_width=0.0),
            dict(bucket_width=0.7),
            dict(min_fill_factor=0.0),
            dict(min_fill_factor=1.5),
            dict(max_rounds=0),
        ],
    )
    def test_invalid_config(self, kw):
        with pytest.raises(ValueError):
            BootstrapConfig(**kw)


# --- regression -------------------------------------------------------------


class TestRegression:
    def test_against_polyfit(self):
        rng = random.Random(5)
        xs = [rng.uniform(0, 0.5) for _ in range(200)]
        ys = [199.1 + 120 * x + rng.gauss(0, 0.5) for x in xs]
        fit = ordinary_least_squares(xs, ys)
        slope, intercept = np.polyfit(xs, ys, 1)
        r2 = np.corrcoef(xs, ys)[0, 1] ** 2
        assert fit.intercept == pytest.approx(intercept, rel=1e-10)
        assert fit.slope == pytest.approx(slope, rel=1e-10)
        assert fit.r_squared == pytest.approx(r2, rel=1e-10)
        assert fit.n_points == 200

    def test_degenerate(self):
        with pytest.raises(DegenerateData):
            ordinary_least_squares([0.3, 0.3], [200.0, 201.0])

    def test_static_evaluation(self):
        # 64-core node, slope 120 W per unit fraction; cp_frac = 0.0025 gives 0.30 W.
        capacity = 64.0
        cp_cores = 0.0025 * capacity
        samples = [pair(f, 199.1 + 120 * f, cp=cp_cores) for f in (0.05, 0.1, 0.2, 0.3, 0.45, 0.6, 0.9)]
        result = fit_static_power(samples, CFG, capacity)
        assert result.fit.intercept == pytest.approx(199.1, rel=1e-12)
        assert result.control_plane_watts == pytest.approx(0.30, rel=1e-9)
        assert result.static_watts == pytest.approx(199.40, rel=1e-12)
        assert result.provenance is Provenance.BOOTSTRAP_INIT
        # Only the 5 points below the cutoff are regressed.
        assert result.fit.n_points == 5

    def test_single_level_is_degenerate(self):
        with pytest.raises(DegenerateData):
            fit_static_power([pair(0.3, 230.0) for _ in range(20)], CFG, 64.0)

    def test_no_points_below_cutoff(self):
        with pytest.raises(DegenerateData):
            fit_static_power([pair(0.6, 230.0), pair(0.7, 240.0)], CFG, 64.0)

    def test_negative_intercept(self):
        with pytest.raises(NegativeIntercept):
            fit_static_power([pair(0.1, 10.0), pair(0.4, 100.0)], CFG, 64.0)

    @given(
        st.floats(1.0, 1000.0),
        # Slopes so small that the signal is below float resolution of the intercept are not "affine data".
        st.one_of(st.just(0.0), st.floats(0.01, 500.0)),
        st.lists(st.floats(0.0, 0.49), min_size=2, max_size=40, unique=True),
    )
    def test_exact_affine_recovery(self, intercept, slope, xs):
        if max(xs) - min(xs) < 1e-3:
            return
        fit = ordinary_least_squares(xs, [intercept + slope * x for x in xs])
        assert abs(fit.intercept - intercept) / intercept < 1e-9
        assert abs(fit.slope - slope) <= 1e-9 * max(slope, intercept)
        assert fit.r_squared == 1.0

    @given(st.floats(1.0, 100.0), st.floats(0.0, 10.0), st.floats(0.0, 10.0))
    def test_monotone_in_control_plane(self, slope, cp_a, cp_b):
        lo, hi = sorted((cp_a, cp_b))
        base = [(0.1, 199.1 + slope * 0.1), (0.4, 199.1 + slope * 0.4)]
        s_lo = fit_static_power([pair(f, w, cp=lo) for f, w in base], CFG, 64.0).static_watts
        s_hi = fit_static_power([pair(f, w, cp=hi) for f, w in base], CFG, 64.0).static_watts
        assert s_lo <= s_hi

    def test_sample_pair_range(self):
        with pytest.raises(ValueError):
            pair(1.2, 200.0)


# --- jobs against fakes --------------------------------------------------------


class ConstantPower:
    def __init__(self, node, watts, clock, fail_every=0):
        self.node, self.watts, self.clock, self.fail_every = node, watts, clock, fail_every
        self.calls = 0

    def poll(self):
        self.calls += 1
        if self.fail_every and self.calls % self.fail_every:
            raise Unreachable("bmc down")
        return PowerSample(self.node, self.watts, self.clock.now())


class StaticMetrics:
    def __init__(self, clock, pods=("coredns-a",), cores=0.0, capacity=64.0):
        self.clock, self.pods, self.cores, self.capacity = clock, pods, cores, capacity

    def node_capacity(self):
        return {"n1": self.capacity}

    def poll_node_cpu(self):
        return {"n1": self.cores}

    def poll_container_cpu(self):
        containers = {ContainerRef("kube-system", p, "c", "n1"): self.cores / len(self.pods) for p in self.pods}
        return {"n1": CpuSample(self.clock.now(), "n1", self.cores, containers)}


MATCHER = ControlPlaneMatcher(["coredns-.*"])


class TestBaseInit:
    def test_constant_stream(self):
        clock = VirtualClock()
        profile = run_base_init(BaseInitConfig(), {"n1": ConstantPower("n1", 100.0, clock)}, StaticMetrics(clock), MATCHER, clock)
        assert profile.static_watts == {"n1": 100.0}
        assert profile.provenance is Provenance.BASE_INIT
        assert clock.now() == pytest.approx(285.0)

    def test_cluster_not_empty(self):
        clock = VirtualClock()
        with pytest.raises(ClusterNotEmpty) as info:
            run_base_init(
                BaseInitConfig(),
                {"n1": ConstantPower("n1", 100.0, clock)},
                StaticMetrics(clock, pods=("coredns-a", "myapp-1")),
                MATCHER,
                clock,
            )
        assert info.value.pods == ["kube-system/myapp-1"]
        assert "myapp-1" in str(info.value)

    def test_gaps_tolerated(self):
        clock = VirtualClock()
        power = ConstantPower("n1", 150.0, clock, fail_every=2)  # every other poll fails: exactly half arrive
        profile = run_base_init(BaseInitConfig(), {"n1": power}, StaticMetrics(clock), MATCHER, clock)
        assert profile.static_watts["n1"] == 150.0
        assert power.calls == 20

    def test_insufficient_samples(self):
        clock = VirtualClock()
        power = ConstantPower("n1", 150.0, clock, fail_every=3)  # two of every three polls fail
        with pytest.raises(InsufficientSamples) as info:
            run_base_init(BaseInitConfig(), {"n1": power}, StaticMetrics(clock), MATCHER, clock)
        assert info.value.expected == 20 and info.value.got < 10

    def test_simulated_idle(self):
        scenario = builtin_scenario("idle", seed=1)
        sim = Simulation(scenario)
        clock = VirtualClock()
        matcher = ControlPlaneMatcher(scenario.control_plane_patterns())
        profile = run_base_init(BaseInitConfig(), sim.power_collectors(clock), sim.metrics_source(clock), matcher, clock)
        assert abs(profile.static_watts["sut"] - 199.1) < 0.5

    def test_config_invariant(self):
        with pytest.raises(ValueError):
            BaseInitConfig(duration=20, cadence=15)


class TestBootstrapInit:
    def test_constant_load_exceeds_rounds(self):
        clock = VirtualClock()
        cfg = BootstrapConfig(max_rounds=3)
        metrics = StaticMetrics(clock, pods=("app",), cores=0.3 * 64)
        with pytest.raises(MaxRoundsExceeded) as info:
            run_bootstrap_init(cfg, {"n1": ConstantPower("n1", 230.0, clock)}, metrics, MATCHER, clock)
        counts = info.value.counts["n1"]
        assert counts[1] == 3 * 120 and sum(counts) == counts[1]
        assert info.value.rounds == 3

    def test_empty_cluster_exceeds_rounds(self):
        clock = VirtualClock()
        cfg = BootstrapConfig(max_rounds=2)
        with pytest.raises(MaxRoundsExceeded) as info:
            run_bootstrap_init(cfg, {"n1": ConstantPower("n1", 199.1, clock)}, StaticMetrics(clock), MATCHER, clock)
        assert info.value.counts == {"n1": [0] * 6}
        assert info.value.partial is None

    def test_random_stressor(self):
        scenario = builtin_scenario("random-stressor", seed=3)
        sim = Simulation(scenario)
        clock = VirtualClock()
        matcher = ControlPlaneMatcher(scenario.control_plane_patterns())
        profile = run_bootstrap_init(CFG, sim.power_collectors(clock), sim.metrics_source(clock), matcher, clock)
        assert profile.provenance is Provenance.BOOTSTRAP_INIT
        truth = sim.true_static_watts("sut")
        assert abs(profile.static_watts["sut"] - truth) < 0.7
        assert math.isfinite(profile.static_watts["sut"])
