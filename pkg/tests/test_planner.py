import math
import time

import numpy as np
import pytest
from hypothesis import given, strategies as st

from pacreach.errors import Infeasible, InvalidParameter, PlanViolation
from pacreach.planner import (
    ControlPlan,
    ExpectedPlan,
    ReachPlan,
    auto_split,
    control_sample_size,
    da19_interval_size,
    expected_confidence,
    expected_output_sample_size,
    hoeffding_inner_size,
    log_grid,
    reach_sample_size,
    small_p_approximations,
)


def oracle_reach(N, p, d):
    # smallest m >= N with N (1-p)^m <= d, by counting up
    m = 1
    while N * (1 - p) ** m > d * (1 + 1e-12):
        m += 1
    return max(m, N)


def oracle_control(alpha, eps, dC):
    k = 1
    while (1 - alpha) ** k > eps * dC * (1 + 1e-12):
        k += 1
    return k


@pytest.mark.parametrize(
    "args,m", [((10, 0.05, 0.05), 104), ((8, 0.001, 0.05), 5073), ((1, 0.5, 0.5), 1), ((100, 0.05, 0.05), 149)]
)
def test_reach_sample_size_values(args, m):
    assert reach_sample_size(*args) == m


def test_reach_sample_size_floors_at_N():
    assert reach_sample_size(50, 0.9, 0.5) == 50


@pytest.mark.parametrize("args,k", [((0.1, 0.05, 0.05), 57), ((0.5, 0.5, 0.5), 2), ((0.9, 0.5, 0.5), 1)])
def test_control_sample_size_values(args, k):
    assert control_sample_size(*args) == k


def test_hoeffding_and_da19():
    assert hoeffding_inner_size(1, 0.1, 1e-4) == 1981
    assert hoeffding_inner_size(1, 1, 2 / math.e**2) == 4
    assert da19_interval_size(1, 0.05, 0.05) == 148
    assert da19_interval_size(2, 0.05, 0.05) == 351


def test_expected_output_sample_size():
    assert expected_output_sample_size(1, 0.1, 0.1, 1e-4) == 60
    with pytest.raises(Infeasible):
        expected_output_sample_size(1, 0.1, 0.1, 0.01)


def test_expected_scan_matches_brute_force():
    for n, eps, d, dmu in [(1, 0.1, 0.1, 1e-4), (2, 0.2, 0.05, 1e-5), (3, 0.3, 0.2, 1e-3)]:
        m = 1
        while expected_confidence(m, n, eps, dmu) < 1 - d:
            m += 1
        assert expected_output_sample_size(n, eps, d, dmu) == m


@pytest.mark.parametrize("bad", [0, 1, -0.1, 1.5, float("nan")])
def test_invalid_unit_parameters(bad):
    with pytest.raises(InvalidParameter):
        reach_sample_size(10, bad, 0.05)
    with pytest.raises(InvalidParameter):
        control_sample_size(bad, 0.05, 0.05)


def test_invalid_other_parameters():
    with pytest.raises(InvalidParameter):
        reach_sample_size(0, 0.1, 0.1)
    with pytest.raises(InvalidParameter):
        reach_sample_size(2.5, 0.1, 0.1)
    with pytest.raises(InvalidParameter):
        hoeffding_inner_size(0, 0.1, 0.1)
    with pytest.raises(InvalidParameter):
        hoeffding_inner_size(1, 0, 0.1)


@given(st.integers(1, 500), st.floats(1e-4, 0.99), st.floats(1e-6, 0.99))
def test_reach_matches_oracle(N, p, d):
    m = reach_sample_size(N, p, d)
    assert m >= N
    if m > N:
        assert abs(m - oracle_reach(N, p, d)) <= 1  # float rounding at the ceiling edge
        assert N * (1 - p) ** m <= d * (1 + 1e-9)


@given(st.integers(1, 200), st.floats(1e-3, 0.5), st.floats(1e-4, 0.5), st.floats(1e-4, 0.5))
def test_reach_monotone(N, p, d, d2):
    lo, hi = sorted((d, d2))
    assert reach_sample_size(N, p, lo) >= reach_sample_size(N, p, hi)
    assert reach_sample_size(N + 1, p, d) >= reach_sample_size(N, p, d)


@given(st.floats(1e-3, 0.99), st.floats(1e-3, 0.99), st.floats(1e-4, 0.99))
def test_control_matches_oracle(a, e, dC):
    assert abs(control_sample_size(a, e, dC) - oracle_control(a, e, dC)) <= 1


def test_auto_split_defaults():
    plan = auto_split(0.05, 0.05, 0.1, 0.05, 10)
    assert (plan.k, plan.m, plan.total_n) == (61, 205, 12505)
    assert math.isclose(plan.delta_C, 0.0339, rel_tol=0.01)
    assert math.isclose(plan.delta_R, 0.000271, rel_tol=0.01)
    plan.check()
    assert plan.is_compliant


def test_auto_split_is_grid_optimal():
    delta, p, alpha, eps, N = 0.05, 0.05, 0.1, 0.05, 10
    plan = auto_split(delta, p, alpha, eps, N)
    best = None
    for dC in log_grid():
        k = control_sample_size(alpha, eps, float(dC))
        for dR in log_grid():
            if (1 - dR) ** k * (1 - dC) >= 1 - delta:
                n = k * reach_sample_size(N, p, float(dR))
                best = n if best is None else min(best, n)
    assert plan.total_n == best


@given(
    st.floats(0.01, 0.3), st.floats(0.01, 0.3), st.floats(0.02, 0.5), st.floats(0.01, 0.3), st.integers(1, 100)
)
def test_auto_split_constraints_hold(delta, p, alpha, eps, N):
    try:
        plan = auto_split(delta, p, alpha, eps, N, grid_points=60)
    except Infeasible:
        return
    assert plan.k >= control_sample_size(alpha, eps, plan.delta_C)
    assert plan.m >= reach_sample_size(N, p, plan.delta_R)
    assert (1 - plan.delta_R) ** plan.k * (1 - plan.delta_C) >= 1 - delta
    assert plan.total_n == plan.m * plan.k


def test_auto_split_fast():
    t = time.perf_counter()
    auto_split(0.05, 0.05, 0.1, 0.05, 10)
    assert time.perf_counter() - t < 1.0


def test_auto_split_infeasible():
    with pytest.raises(Infeasible):
        auto_split(1e-7, 0.05, 0.1, 0.05, 10, grid_points=20)


def test_reach_plan_violations_name_inequality():
    plan = ReachPlan(10, 0.05, 0.05, 50)
    with pytest.raises(PlanViolation, match=r"log\(delta_R/N\)/log\(1-p\)"):
        plan.check()
    assert any("m >= N" in v for v in ReachPlan(10, 0.9, 0.5, 5).violations())
    assert ReachPlan.auto(10, 0.05, 0.05).is_compliant


def test_control_plan_violations():
    reach = ReachPlan.auto(10, 0.05, 0.01)
    bad_k = ControlPlan(0.1, 0.05, 0.05, 0.01, 0.01, 10, reach)
    msgs = " ".join(bad_k.violations())
    assert "log(epsilon*delta_C)/log(1-alpha)" in msgs
    bad_conf = ControlPlan(0.1, 0.05, 0.05, 0.04, 0.01, 60, reach)
    assert any("(1-delta_R)^k (1-delta_C) >= 1-delta" in v for v in bad_conf.violations())


def test_expected_plan():
    plan = ExpectedPlan.auto(1, 0.1, 0.1, 1e-4, 0.1)
    assert (plan.m, plan.inner_N) == (60, 1981)
    plan.check()
    low = ExpectedPlan(1, 0.1, 0.1, 1e-4, 0.1, 1.0, 30, 1981)
    with pytest.raises(PlanViolation):
        low.check()


def test_small_p_shortcuts():
    approx = small_p_approximations(8, 0.001, 0.05)
    assert round(approx["log10_small_p"]) == 2204
    # replacing -log(1-p) by p over-counts slightly, the base-10 variant under-counts
    assert approx["log10_small_p"] < reach_sample_size(8, 0.001, 0.05) <= approx["ln_small_p"]


def test_log_grid_shape():
    g = log_grid()
    assert len(g) == 250 and math.isclose(g[0], 1e-6) and math.isclose(g[-1], 0.999)
    assert np.all(np.diff(g) > 0)
