import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from megacontroller.cfm import (
    CollisionError,
    IdmParams,
    OvmParams,
    bando_optimal_velocity,
    bando_optimal_velocity_slope,
    idm_accel,
    idm_equilibrium_gap,
    ovm_ftl_accel,
)

speeds = st.floats(0.0, 29.0)
gaps = st.floats(0.5, 300.0)


def test_idm_frozen_value():
    # 1.3 * (1 - (20/30)^4 - (22/30)^2)
    assert idm_accel(30.0, 20.0, 0.0) == pytest.approx(0.3440987654320989, rel=1e-14)


def test_idm_equilibrium_gap_frozen_value():
    # (s0 + vT) / sqrt(1 - (v/v0)^4) = 22 / sqrt(65/81)
    assert idm_equilibrium_gap(20.0) == pytest.approx(198.0 / math.sqrt(65.0), rel=1e-14)
    assert idm_equilibrium_gap(20.0) == pytest.approx(24.558877448663274, rel=1e-14)


def test_idm_free_road_at_desired_speed():
    assert idm_accel(1e12, 30.0, 0.0) == pytest.approx(0.0, abs=1e-9)


def test_idm_rejects_non_positive_gap():
    with pytest.raises(CollisionError):
        idm_accel(0.0, 10.0, 0.0)
    with pytest.raises(CollisionError):
        ovm_ftl_accel(np.array([5.0, -1.0]), 10.0, 10.0)


def test_idm_params_validation():
    with pytest.raises(ValueError):
        IdmParams(T=0.0)
    with pytest.raises(ValueError):
        IdmParams(delta=0.5)
    with pytest.raises(ValueError):
        idm_equilibrium_gap(30.0)


@given(speeds)
def test_idm_zero_accel_at_equilibrium(v):
    s = idm_equilibrium_gap(v)
    assert idm_accel(s, v, 0.0) == pytest.approx(0.0, abs=1e-9)


@given(gaps, gaps, speeds, st.floats(-10.0, 10.0))
def test_idm_monotone_in_gap(s1, s2, v, dv):
    lo, hi = sorted((s1, s2))
    assert idm_accel(lo, v, dv) <= idm_accel(hi, v, dv) + 1e-12


@given(gaps, speeds, st.floats(-10.0, 10.0), st.floats(-10.0, 10.0))
def test_idm_monotone_in_approach_rate(s, v, d1, d2):
    lo, hi = sorted((d1, d2))
    assert idm_accel(s, v, hi) <= idm_accel(s, v, lo) + 1e-12


def test_idm_vectorised_matches_scalar():
    s = np.array([10.0, 30.0, 80.0])
    v = np.array([5.0, 15.0, 25.0])
    dv = np.array([1.0, 0.0, -2.0])
    vec = idm_accel(s, v, dv)
    assert np.allclose(vec, [idm_accel(*args) for args in zip(s, v, dv)], rtol=0, atol=0)


def test_bando_saturates_and_is_monotone():
    p = OvmParams()
    h = np.linspace(0.0, 500.0, 2001)
    V = bando_optimal_velocity(h, p)
    assert np.all(np.diff(V) >= 0)
    assert np.all(np.diff(V[h < 100.0]) > 0)
    assert V[-1] == pytest.approx(p.v_max, rel=1e-6)


@given(st.floats(0.0, 200.0))
def test_bando_slope_matches_central_difference(h):
    p = OvmParams()
    eps = 1e-5
    fd = (bando_optimal_velocity(h + eps, p) - bando_optimal_velocity(h - eps, p)) / (2 * eps)
    assert bando_optimal_velocity_slope(h, p) == pytest.approx(fd, rel=1e-6, abs=1e-9)


def test_ovm_ftl_combines_both_terms():
    p = OvmParams(alpha=0.5, beta=10.0, nu=2.0)
    h, v, vl = 20.0, 10.0, 12.0
    expected = 0.5 * (bando_optimal_velocity(h, p) - v) + 10.0 * (vl - v) / h**2
    assert ovm_ftl_accel(h, v, vl, p) == pytest.approx(expected, rel=1e-15)
