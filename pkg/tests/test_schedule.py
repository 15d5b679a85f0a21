import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sgdboot.schedule import StepSchedule, validate_basic, validate_bootstrap


def test_alpha_values():
    s = StepSchedule(c0=1.0, k0=1.0, gamma=0.51)
    assert s.alpha(0) == 1.0
    s = StepSchedule(c0=1.0, k0=1.0, gamma=0.75)
    assert s.alpha(0) == 1.0
    s = StepSchedule(c0=0.5, k0=8.0, gamma=0.75)
    assert s.alpha(8) == pytest.approx(0.0625, abs=1e-15)  # 0.5 * 16^-0.75


def test_alpha_half_exponent_values():
    # gamma = 0.5 is outside the admissible open interval but the raw power
    # law is still worth pinning down, so evaluate it directly.
    assert 1.0 / (1.0 + 1.0) ** 0.5 == pytest.approx(0.70710678, abs=1e-8)


def test_schedule_rejects_bad_parameters():
    with pytest.raises(ValueError):
        StepSchedule(c0=0.0, k0=1.0, gamma=0.75)
    with pytest.raises(ValueError):
        StepSchedule(c0=1.0, k0=0.5, gamma=0.75)
    with pytest.raises(ValueError):
        StepSchedule(c0=1.0, k0=1.0, gamma=0.5)  # open interval
    with pytest.raises(ValueError):
        StepSchedule(c0=1.0, k0=1.0, gamma=1.0)


def test_validate_basic_boundary():
    s = StepSchedule(c0=0.5, k0=1.0, gamma=0.75)
    assert validate_basic(s, l1=1.0).passed  # equality counts as pass
    report = validate_basic(StepSchedule(c0=1.0, k0=1.0, gamma=0.75), l1=1.0)
    assert not report.passed
    assert any("2*c0*L1" in msg for msg in report.failures())


def test_validate_bootstrap_equality_boundary():
    s = StepSchedule(c0=1.0 / 6.0, k0=7000.0, gamma=0.75)
    report = validate_bootstrap(s, mu=1.0, l1=1.0, l2=1.0, wmin=1.0, wmax=1.0)
    # 3 * (1/6) * 1 * (1 + 1) = 1 exactly
    assert report.checks[0][1]


def test_validate_bootstrap_minimal_k0():
    s = StepSchedule(c0=1.0 / 6.0, k0=1.0, gamma=0.75)
    report = validate_bootstrap(s, mu=1.0, l1=1.0, l2=1.0, wmin=1.0, wmax=1.0)
    assert report.min_k0 == pytest.approx(6561.0, rel=1e-12)  # (2*0.75*6)^4
    assert not report.passed
    assert any("k0" in msg for msg in report.failures())


def test_validate_bootstrap_degenerate_weights_run():
    s = StepSchedule(c0=0.01, k0=2.0, gamma=0.6)
    report = validate_bootstrap(s, mu=0.5, l1=1.0, l2=0.0, wmin=1.0, wmax=1.0)
    assert report.min_k0 is not None  # variance-1 is not this validator's job


@given(
    c0=st.floats(0.01, 2.0),
    k0=st.floats(1.0, 50.0),
    gamma=st.floats(0.51, 0.99),
    k=st.integers(0, 10_000),
)
@settings(max_examples=200, deadline=None)
def test_alpha_strictly_decreasing(c0, k0, gamma, k):
    s = StepSchedule(c0=c0, k0=k0, gamma=gamma)
    assert s.alpha(k + 1) < s.alpha(k)


@given(
    c0=st.floats(0.01, 2.0),
    k0=st.floats(1.0, 20.0),
    gamma=st.floats(0.51, 0.99),
    k=st.integers(1, 2000),
    m_frac=st.floats(0.0, 1.0),
)
@settings(max_examples=100, deadline=None)
def test_partial_sum_growth(c0, k0, gamma, k, m_frac):
    # sum_{i=m+1}^{k} alpha_i >= c0/(2(1-gamma)) ((k+k0)^{1-g} - (m+k0)^{1-g})
    s = StepSchedule(c0=c0, k0=k0, gamma=gamma)
    m = int(m_frac * k)
    lhs = float(np.sum(s.alphas(k + 1)[m + 1 :]))
    rhs = c0 / (2 * (1 - gamma)) * ((k + k0) ** (1 - gamma) - (m + k0) ** (1 - gamma))
    assert lhs >= rhs - 1e-12 * max(1.0, abs(rhs))


@given(
    c0=st.floats(0.01, 2.0),
    gamma=st.floats(0.51, 0.99),
    k=st.integers(1, 5000),
    p=st.sampled_from([2, 3, 4]),
)
@settings(max_examples=100, deadline=None)
def test_power_sum_bound(c0, gamma, k, p):
    # sum_{i=1}^{k} alpha_i^p <= c0^p / (p*gamma - 1), stated for k0 >= 1
    s = StepSchedule(c0=c0, k0=1.0, gamma=gamma)
    lhs = float(np.sum(s.alphas(k + 1)[1:] ** p))
    rhs = c0**p / (p * gamma - 1)
    assert lhs <= rhs + 1e-12 * max(1.0, rhs)
