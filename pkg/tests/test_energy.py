import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from megacontroller.energy import (
    METERS_PER_MILE,
    VEHICLE_CLASSES,
    EnergyModel,
    default_model,
    fuel_economy,
    fuel_rate,
    load_energy_models,
    trajectory_fuel,
)


def toy():
    return EnergyModel("toy", beta=0.1, c0=0.5, c1=0.01, c2=0.001, c3=1e-5, p0=0.2, p1=0.01, p2=0.0,
                       q0=0.05, q1=0.001, z0=0.1, z1=0.5, z2=0.0)


def reference_rate(v, a, theta, m):
    """Term-by-term evaluation written out independently of the vectorised code."""
    C = m.c0 + m.c1 * v + m.c2 * v**2 + m.c3 * v**3
    P = m.p0 + m.p1 * v + m.p2 * v**2
    Q = m.q0 + m.q1 * v
    Z = m.z0 + m.z1 * v + m.z2 * v**2
    a_plus = max(-P / (2 * Q), a)
    return max(m.beta, C + P * a + Q * a_plus**2 + Z * theta)


@given(st.floats(0.0, 40.0), st.floats(-4.0, 3.0), st.floats(-0.05, 0.05))
def test_fuel_rate_matches_term_by_term_reference(v, a, theta):
    m = toy()
    assert fuel_rate(v, a, theta, m) == pytest.approx(reference_rate(v, a, theta, m), rel=1e-12, abs=1e-12)


@given(st.floats(0.0, 40.0), st.floats(-4.0, 3.0))
def test_fuel_rate_never_below_floor(v, a):
    for m in load_energy_models()[0].values():
        assert fuel_rate(v, a, 0.0, m) >= m.beta


def test_idle_rate_is_c0():
    m = toy()
    assert fuel_rate(0.0, 0.0, 0.0, m) == pytest.approx(m.c0)


def test_all_classes_load_and_are_valid():
    models, density = load_energy_models()
    assert set(models) == set(VEHICLE_CLASSES)
    assert density > 0
    assert default_model("pickup") is models["pickup"] or default_model("pickup") == models["pickup"]


def test_model_validation():
    with pytest.raises(ValueError):
        EnergyModel("bad", beta=0.0, c0=0.0)
    with pytest.raises(ValueError):
        EnergyModel("bad", beta=0.0, c0=1.0, q0=-1.0)
    with pytest.raises(ValueError):
        fuel_rate(-1.0, 0.0, 0.0, toy())


def test_unknown_coefficient_key_rejected(tmp_path):
    p = tmp_path / "m.yaml"
    p.write_text("classes:\n  x: {beta: 0, c0: 1, q0: 1, z0: 1, bogus: 3}\n")
    with pytest.raises(ValueError, match="bogus"):
        load_energy_models(p)


def test_constant_speed_trajectory_fuel():
    m = toy()
    v = np.full(101, 20.0)
    rate = reference_rate(20.0, 0.0, 0.0, m)
    assert trajectory_fuel(v, None, m, 0.1) == pytest.approx(101 * 0.1 * rate, rel=1e-12)
    with pytest.raises(ValueError):
        trajectory_fuel(v, np.zeros(5), m, 0.1)


def test_fuel_economy_units():
    # one mile on one gallon of fuel
    assert fuel_economy(2839.0, METERS_PER_MILE) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        fuel_economy(0.0, 100.0)


def test_linear_term_switch():
    m = toy()
    m2 = EnergyModel(**{**m.__dict__, "linear_uses_a_plus": True})
    a = -3.0
    P, Q = m.P(10.0), m.Q(10.0)
    assert -P / (2 * Q) > a  # the clamp is active for this deceleration
    assert fuel_rate(10.0, a, 0.0, m2) > fuel_rate(10.0, a, 0.0, m)
