import math

import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from blockfft.errors import ValidationError
from blockfft.map_engine import BlockTiming, JobResult, Kernel, TimingBreakdown
from blockfft.block_io import split_plan
from blockfft.perf_model import (
    AmdahlParams,
    ClusterSpec,
    amdahl_speedup,
    calibrate_unit_cost,
    compare_speedup,
    estimate_p,
    predict_runtime,
    speedup_report,
)

p_st = st.floats(0, 1, allow_nan=False)
n_st = st.integers(1, 10_000)


def test_amdahl_examples():
    assert amdahl_speedup(0, 1000) == 1.0
    assert amdahl_speedup(1, 8) == 8.0
    assert abs(amdahl_speedup(0.75, 4) - 1 / (0.25 + 0.1875)) <= 1e-12
    assert abs(amdahl_speedup(0.75, 4) - 2.2857142857) <= 1e-9


@pytest.mark.parametrize("p,n", [(-0.1, 2), (1.1, 2), (0.5, 0), (float("nan"), 2)])
def test_amdahl_domain(p, n):
    with pytest.raises(ValidationError):
        amdahl_speedup(p, n)


@given(p_st, n_st)
def test_amdahl_bounds(p, n):
    s = amdahl_speedup(p, n)
    assert 1.0 - 1e-12 <= s <= n * (1 + 1e-12)
    if p < 1:
        assert s <= 1 / (1 - p) * (1 + 1e-12)


@given(p_st, n_st, n_st)
def test_amdahl_monotone_in_n(p, n1, n2):
    lo, hi = sorted((n1, n2))
    assert amdahl_speedup(p, lo) <= amdahl_speedup(p, hi) * (1 + 1e-12)


@given(p_st, p_st, n_st)
def test_amdahl_monotone_in_p(p1, p2, n):
    lo, hi = sorted((p1, p2))
    assert amdahl_speedup(lo, n) <= amdahl_speedup(hi, n) * (1 + 1e-12)


def test_amdahl_limits():
    assert amdahl_speedup(1.0, 37) == 37
    assert abs(amdahl_speedup(0.9, 10**12) - 10) < 1e-6


def timings(read, compute, write, wall=0):
    return TimingBreakdown([BlockTiming(0, read, compute, write)], wall)


def test_estimate_p_examples():
    assert estimate_p(timings(40, 25, 35)) == 0.25
    assert estimate_p(timings(10, 0, 5)) == 0.0
    assert abs(estimate_p(timings(50, 7, 43)) - 0.07) < 1e-12
    assert estimate_p(timings(40, 25, 35), {"read", "compute", "write"}) == 1.0
    with pytest.raises(ValidationError):
        estimate_p(timings(0, 0, 0))
    with pytest.raises(ValidationError):
        estimate_p(timings(1, 1, 1), {"shuffle"})


@given(st.integers(0, 10**9), st.integers(0, 10**9), st.integers(0, 10**9), st.integers(1, 1000))
def test_estimate_p_range_and_scale_invariance(r, c, w, k):
    assume(r + c + w > 0)
    p = estimate_p(timings(r, c, w))
    assert 0 <= p <= 1
    assert math.isclose(estimate_p(timings(r * k, c * k, w * k)), p, rel_tol=1e-12, abs_tol=1e-15)


def test_predict_runtime_examples():
    base = predict_runtime(1024, ClusterSpec(1, 1, 1.0), 2.0)
    assert base.predicted_ns == 2.0 * 1024 * 10
    doubled = predict_runtime(1024, ClusterSpec(2, 1, 1.0), 2.0)
    assert doubled.predicted_ns == base.predicted_ns / 2
    cluster = predict_runtime(1024, ClusterSpec(8, 2, 0.8), 2.0)
    assert math.isclose(base.predicted_ns / cluster.predicted_ns, 12.8)
    with pytest.raises(ValidationError):
        predict_runtime(1, ClusterSpec(), 1.0)


def test_cluster_spec_defaults_and_domain():
    assert ClusterSpec().efficiency == 0.8
    for bad in [dict(servers=0), dict(cores_per_server=0), dict(efficiency=0), dict(efficiency=1.5)]:
        with pytest.raises(ValidationError):
            ClusterSpec(**bad)


@given(
    st.integers(2, 2**40),
    st.integers(1, 64),
    st.integers(1, 64),
    st.floats(0.05, 1.0),
    st.integers(2, 5),
)
def test_predict_inverse_linear(n, s, c, eta, k):
    base = predict_runtime(n, ClusterSpec(s, c, eta), 1.5).predicted_ns
    assert math.isclose(predict_runtime(n, ClusterSpec(s * k, c, eta), 1.5).predicted_ns, base / k, rel_tol=1e-12)
    assert math.isclose(predict_runtime(n, ClusterSpec(s, c * k, eta), 1.5).predicted_ns, base / k, rel_tol=1e-12)
    assert math.isclose(
        predict_runtime(n, ClusterSpec(s, c, eta / k), 1.5).predicted_ns, base * k, rel_tol=1e-12
    )


def test_calibration_inverts_prediction():
    unit = calibrate_unit_cost(3_000_000, 2**16)
    est = predict_runtime(2**16, ClusterSpec(1, 1, 1.0), unit)
    assert math.isclose(est.predicted_ns, 3_000_000)


def _result(wall, workers, read=40, compute=50, write=10, manifest=None):
    manifest = manifest or split_plan(4096, 2048, 256, "complex-f32")
    return JobResult(manifest, timings(read, compute, write, wall), {0: None}, None, Kernel.FFT_FORWARD, workers)


def test_speedup_report_synthetic():
    rep = speedup_report(100_000_000_000, 43_750_000_000, AmdahlParams(0.75, 4))
    assert math.isclose(rep.measured_speedup, 2.2857142857, rel_tol=1e-9)
    assert rep.relative_error < 1e-12 and not rep.warn


def test_compare_speedup_identical_runs():
    rep = compare_speedup(_result(1000, 1), _result(1000, 1))
    assert rep.measured_speedup == 1.0
    assert rep.p_estimate == 0.5 and rep.n_threads == 1


def test_compare_speedup_warns_and_rejects():
    rep = compare_speedup(_result(1000, 1), _result(1000, 4))
    assert rep.warn and rep.to_dict()["warn"]
    other = split_plan(8192, 2048, 256, "complex-f32")
    with pytest.raises(ValidationError):
        compare_speedup(_result(1000, 1), _result(500, 4, manifest=other))
    with pytest.raises(ValidationError):
        compare_speedup(_result(1000, 2), _result(500, 4))
