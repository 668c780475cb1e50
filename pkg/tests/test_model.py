import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from kubewatt.errors import MissingProfile, SampleSkew
from kubewatt.model import (
    AttributionRecord,
    ContainerRef,
    ControlPlaneMatcher,
    CpuHistory,
    CpuSample,
    PowerSample,
    Provenance,
    StaticPowerProfile,
    attribute_power,
    snapshot_attribution,
    split_power,
)

NODE = "n1"


def ref(pod, container="main", ns="default", node=NODE):
    return ContainerRef(ns, pod, container, node)


def cpu_sample(containers, node_cpu=None, t=0.0, node=NODE):
    containers = {ref(p, node=node) if isinstance(p, str) else p: c for p, c in containers.items()}
    if node_cpu is None:
        node_cpu = sum(containers.values())
    return CpuSample(timestamp=t, node=node, node_cpu=node_cpu, containers=containers)


PROFILE = StaticPowerProfile({NODE: 199.1}, Provenance.MANUAL, 0.0)
NO_CP = ControlPlaneMatcher()


class TestSplitPower:
    def test_above_static(self):
        dyn, res = split_power(250.0, 199.1)
        assert dyn == pytest.approx(50.9, abs=1e-12)
        assert res == 0.0

    def test_at_static(self):
        assert split_power(199.1, 199.1) == (0.0, 0.0)

    def test_below_static(self):
        dyn, res = split_power(180.0, 199.1)
        assert dyn == 0.0
        assert res == pytest.approx(-19.1, abs=1e-12)

    @pytest.mark.parametrize("node, static", [(10.0, 0.0), (10.0, -1.0), (-1.0, 10.0), (math.nan, 10.0)])
    def test_rejects_invalid(self, node, static):
        with pytest.raises(ValueError):
            split_power(node, static)

    @given(st.floats(0, 1e4), st.floats(1e-3, 1e4))
    def test_recombines(self, node, static):
        dyn, res = split_power(node, static)
        assert dyn >= 0 and res <= 0
        assert dyn == 0 or res == 0
        assert math.isclose(static + dyn + res, node, rel_tol=1e-12, abs_tol=1e-9)


class TestAttributePower:
    def test_proportional(self):
        out = attribute_power(50.9, cpu_sample({"a": 2.0, "b": 6.0}), NO_CP)
        assert out[ref("a")] == pytest.approx(12.725, rel=1e-12)
        assert out[ref("b")] == pytest.approx(38.175, rel=1e-12)

    def test_control_plane_excluded(self):
        sample = cpu_sample({"a": 4.0, "kube-x": 1.0})
        out = attribute_power(50.9, sample, ControlPlaneMatcher(["kube-.*"]))
        assert out == {ref("a"): 50.9}

    def test_zero_cpu_gives_zero(self):
        out = attribute_power(50.9, cpu_sample({"a": 0.0, "b": 0.0}), NO_CP)
        assert out == {ref("a"): 0.0, ref("b"): 0.0}

    def test_negative_dynamic_rejected(self):
        with pytest.raises(ValueError):
            attribute_power(-1.0, cpu_sample({"a": 1.0}), NO_CP)

    @given(st.integers(1, 6), st.lists(st.booleans(), min_size=1, max_size=6))
    def test_all_zero_snapshots(self, n, cp_flags):
        # Every way of having only zero-CPU workload gives an all-zero attribution.
        containers = {f"{'cp' if cp_flags[i % len(cp_flags)] else 'w'}-{i}": 0.0 for i in range(n)}
        sample = cpu_sample(containers, node_cpu=1.0)
        out = attribute_power(50.9, sample, ControlPlaneMatcher(["cp-.*"]))
        assert all(v == 0.0 for v in out.values())
        assert not any(r.pod.startswith("cp-") for r in out)


cores = st.floats(min_value=0.0, max_value=128.0, allow_nan=False)
pods = st.dictionaries(st.from_regex(r"(cp|app)-[a-z0-9]{1,5}", fullmatch=True), cores, min_size=1, max_size=12)


class TestAttributionProperties:
    @given(st.floats(0, 500), pods)
    def test_conservation_and_exclusion(self, dynamic, containers):
        sample = cpu_sample(containers)
        matcher = ControlPlaneMatcher(["cp-.*"])
        out = attribute_power(dynamic, sample, matcher)
        assert not any(matcher.matches(r.pod) for r in out)
        assert all(v >= 0 for v in out.values())
        total = math.fsum(out.values())
        workload_cpu = math.fsum(c for p, c in containers.items() if p.startswith("app-"))
        if workload_cpu > 0:
            assert math.isclose(total, dynamic, rel_tol=1e-12, abs_tol=1e-12)
        else:
            assert total == 0

    @given(st.floats(1, 500), pods)
    def test_zero_law_and_proportionality(self, dynamic, containers):
        out = attribute_power(dynamic, cpu_sample(containers), NO_CP)
        for r, w in out.items():
            if containers[r.pod] == 0:
                assert w == 0
        refs = [r for r in out if containers[r.pod] > 1e-6]
        for a, b in zip(refs, refs[1:]):
            assert math.isclose(out[a] / out[b], containers[a.pod] / containers[b.pod], rel_tol=1e-9)

    @given(st.floats(0, 500), pods, st.floats(1e-3, 1e3))
    def test_scale_invariance(self, dynamic, containers, k):
        base = attribute_power(dynamic, cpu_sample(containers), NO_CP)
        scaled = attribute_power(dynamic, cpu_sample({p: c * k for p, c in containers.items()}), NO_CP)
        for r in base:
            assert math.isclose(base[r], scaled[r], rel_tol=1e-9, abs_tol=1e-9)

    @given(st.floats(0, 1000), pods)
    def test_record_conservation(self, watts, containers):
        rec = snapshot_attribution(
            PowerSample(NODE, watts, 10.0), cpu_sample(containers, t=10.0), PROFILE, ControlPlaneMatcher(["cp-.*"])
        )
        assert math.isclose(rec.accounted_watts(), watts, rel_tol=1e-12, abs_tol=1e-12)
        assert rec.dynamic_watts == max(watts - 199.1, 0.0)
        assert all(v >= 0 for v in rec.per_container.values())


class TestSnapshotAttribution:
    def test_idle_cluster(self):
        rec = snapshot_attribution(PowerSample(NODE, 199.1, 0.0), cpu_sample({"a": 0.0}), PROFILE, NO_CP)
        assert rec.static_watts == 199.1
        assert rec.per_container == {ref("a"): 0.0}
        assert rec.unattributed_watts == 0.0

    def test_completed_pods_absent(self):
        # Completed pods are simply not in the sample, so they get no entry at all.
        rec = snapshot_attribution(PowerSample(NODE, 260.0, 0.0), cpu_sample({"stress": 32.0}), PROFILE, NO_CP)
        assert rec.per_container == {ref("stress"): pytest.approx(60.9, rel=1e-12)}

    def test_unattributed_when_no_workload_cpu(self):
        rec = snapshot_attribution(PowerSample(NODE, 250.0, 0.0), cpu_sample({"a": 0.0}, 1.0), PROFILE, NO_CP)
        assert rec.unattributed_watts == pytest.approx(50.9)
        assert rec.accounted_watts() == pytest.approx(250.0, rel=1e-12)

    def test_below_static_has_residual(self):
        rec = snapshot_attribution(PowerSample(NODE, 180.0, 0.0), cpu_sample({"a": 3.0}), PROFILE, NO_CP)
        assert rec.dynamic_watts == 0.0
        assert rec.residual_watts == pytest.approx(-19.1)
        assert rec.per_container == {ref("a"): 0.0}

    def test_skew(self):
        with pytest.raises(SampleSkew):
            snapshot_attribution(PowerSample(NODE, 200.0, 120.0), cpu_sample({"a": 1.0}, t=0.0), PROFILE, NO_CP, 30.0)

    def test_skew_with_lag_compensation(self):
        rec = snapshot_attribution(
            PowerSample(NODE, 200.0, 60.0), cpu_sample({"a": 1.0}, t=0.0), PROFILE, NO_CP, 30.0, power_lag=60.0
        )
        assert rec.cpu_timestamp == 0.0

    def test_missing_profile(self):
        with pytest.raises(MissingProfile):
            snapshot_attribution(
                PowerSample("other", 200.0, 0.0), cpu_sample({"a": 1.0}, node="other"), PROFILE, NO_CP
            )

    def test_node_mismatch(self):
        with pytest.raises(ValueError):
            snapshot_attribution(PowerSample(NODE, 200.0, 0.0), cpu_sample({}, 0.0, node="n2"), PROFILE, NO_CP)


class TestTypes:
    def test_container_ref_requires_names(self):
        with pytest.raises(ValueError):
            ContainerRef("", "p", "c", NODE)

    def test_power_sample_non_negative(self):
        with pytest.raises(ValueError):
            PowerSample(NODE, -1.0, 0.0)

    def test_cpu_sample_rejects_negative_and_foreign(self):
        with pytest.raises(ValueError):
            cpu_sample({"a": -1.0}, node_cpu=1.0)
        with pytest.raises(ValueError):
            CpuSample(0.0, NODE, 1.0, {ref("a", node="n2"): 1.0})

    def test_profile_positive(self):
        with pytest.raises(ValueError):
            StaticPowerProfile({NODE: 0.0}, Provenance.MANUAL, 0.0)

    def test_record_accounting(self):
        rec = AttributionRecord(0.0, NODE, 250.0, 199.1, 50.9, 0.0, 0.0, {ref("a"): 50.9})
        assert rec.accounted_watts() == pytest.approx(250.0)


class TestMatcher:
    def test_full_anchor(self):
        m = ControlPlaneMatcher(["dns"])
        assert m.matches("dns")
        assert not m.matches("freedns-app")

    def test_prefix_wildcard(self):
        m = ControlPlaneMatcher(["coredns-.*"])
        assert m.matches("coredns-abc")
        assert not m.matches("my-coredns-abc")

    def test_invalid_pattern(self):
        with pytest.raises(ValueError):
            ControlPlaneMatcher(["("])


class TestCpuHistory:
    def test_nearest_within_bound(self):
        h = CpuHistory(8)
        for t in (0.0, 15.0, 30.0):
            h.add(cpu_sample({}, 0.0, t=t))
        assert h.nearest(16.0, 30.0).timestamp == 15.0
        assert h.nearest(22.5, 30.0).timestamp == 30.0  # tie goes to the newer sample
        assert h.nearest(100.0, 30.0) is None
        assert h.latest().timestamp == 30.0

    def test_bounded(self):
        h = CpuHistory(2)
        for t in range(5):
            h.add(cpu_sample({}, 0.0, t=float(t)))
        assert len(h) == 2
