import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from megacontroller.accel_controller import (
    AccelController,
    BaseControllerConfig,
    LcConfig,
    LcFilterState,
    LocalObservation,
    base_components,
    commanded_accel,
    headway_factor,
    lc_detect_and_filter,
    lc_safe,
    mpc_anticipation_accel,
    mpc_branch,
    relative_speed_factor,
    safe_accel,
    safe_speed,
    smoothing_factor,
)

CFG = BaseControllerConfig()
observations = st.builds(
    LocalObservation,
    v=st.floats(0.0, 35.0),
    v_lead=st.floats(0.0, 35.0),
    a_lead=st.floats(-6.0, 2.0),
    h=st.floats(4.5, 150.0),
    v_target=st.one_of(st.none(), st.floats(0.0, 35.0)),
    minicar=st.just(True),
)


def test_safe_speed_frozen_value():
    # 2 * 3 * (54 - 4 + 0.5 * 400 / 6) = 500
    assert safe_speed(54.0, 20.0, CFG) == pytest.approx(math.sqrt(500.0), rel=1e-15)


def test_headway_factor_frozen_value():
    assert headway_factor(20.0, 10.0) == pytest.approx(math.tanh(2.64), rel=1e-15)
    assert headway_factor(20.0, 10.0) == pytest.approx(0.9898667413330675, rel=1e-15)


def test_relative_speed_factor_branches():
    # opening gap: 0.5 tanh(dv) + 0.5
    assert relative_speed_factor(1.0, 30.0) == pytest.approx(0.5 * math.tanh(1.0) + 0.5)
    # closing: 0.5 tanh(dv* s / |dv|) + 0.5, printed form kept as is
    assert relative_speed_factor(-2.0, 10.0) == pytest.approx(0.5 * math.tanh(10.3 * 10.0 / 2.0) + 0.5)


def test_target_only_without_leader():
    obs = LocalObservation(v=20.0, v_target=25.0, minicar=False)
    assert commanded_accel(obs) == pytest.approx(1.5)  # k (25 - 20) = 5 clamped to a_max
    obs = LocalObservation(v=20.0, v_target=19.0, minicar=False)
    assert commanded_accel(obs) == pytest.approx(-1.0)


def test_at_or_below_safety_distance_brakes_fully():
    obs = LocalObservation(v=10.0, v_lead=10.0, h=CFG.s0, v_target=10.0, minicar=True)
    assert commanded_accel(obs) == CFG.a_min


@given(observations)
def test_command_never_exceeds_safety_term(obs):
    comps = base_components(obs)
    assert comps["a_cmd"] <= max(comps["a_safe"], CFG.a_min) + 1e-12
    assert CFG.a_min <= comps["a_cmd"] <= CFG.a_max


def test_branch_table():
    base = dict(h=40.0, minicar=True)
    assert mpc_branch(LocalObservation(v=10.0, v_lead=0.0, a_lead=-1.0, **base)) == 1
    assert mpc_branch(LocalObservation(v=10.0, v_lead=12.0, a_lead=-0.5, **base)) == 1
    assert mpc_branch(LocalObservation(v=20.0, v_lead=10.0, a_lead=-0.5, h=10.0, minicar=True)) == 3
    assert mpc_branch(LocalObservation(v=12.0, v_lead=10.0, a_lead=0.5, **base)) == 4
    assert mpc_branch(LocalObservation(v=10.0, v_lead=12.0, a_lead=0.5, **base)) == 5


def test_anticipation_branch_values():
    obs = LocalObservation(v=12.0, v_lead=10.0, a_lead=0.5, h=40.0, minicar=True)
    assert mpc_anticipation_accel(obs) == pytest.approx(0.5 - 4.0 / (2.0 * 36.0))
    obs = LocalObservation(v=10.0, v_lead=12.0, a_lead=0.5, h=40.0, minicar=True)
    assert mpc_anticipation_accel(obs) == pytest.approx(min(1.5, 0.5 * (1 + 0.1 * 2.0)))
    obs = LocalObservation(v=10.0, v_lead=12.0, a_lead=-0.5, h=40.0, minicar=True)
    assert mpc_anticipation_accel(obs) == pytest.approx(-50.0 / (36.0 + 144.0))


@given(st.floats(0.1, 35.0), st.floats(0.0, 10.0), st.floats(-6.0, -0.01), st.floats(4.01, 150.0))
def test_braking_leader_not_slower_selects_stopping_branch(v, extra, a_lead, h):
    # with h > s0 the stopping deceleration always exceeds a_lead * v / v_lead when v <= v_lead,
    # so the second branch is never reached and the first one applies
    obs = LocalObservation(v=v, v_lead=v + extra, a_lead=a_lead, h=h, minicar=True)
    assert mpc_branch(obs) == 1


def test_safe_accel_chain_rule_against_finite_difference():
    # d/dt v_safe along constant leader accel and constant ego speed
    h, v, vl, al, dt = 40.0, 15.0, 12.0, -1.0, 1e-6
    obs = LocalObservation(v=v, v_lead=vl, a_lead=al, h=h, minicar=True)
    vs = lambda t: safe_speed(h + (vl - v) * t + 0.5 * al * t * t, vl + al * t, CFG)
    v_dot = (vs(dt) - vs(-dt)) / (2 * dt)
    assert safe_accel(obs) == pytest.approx(-CFG.k * (v - vs(0.0)) + v_dot, rel=1e-6)


@given(st.floats(-3.0, 1.5), st.floats(-3.0, 1.5), st.floats(5.0, 100.0), st.floats(1.0, 35.0),
       st.floats(-5.0, 5.0))
def test_filter_is_contractive_while_active(u_prev, a_k, s, v, dv):
    obs = LocalObservation(v=v, v_lead=v + dv, h=s, minicar=True)
    state = LcFilterState(active=True, u_prev=u_prev, prev_obs=obs)
    cfg = LcConfig(safety_release=False)
    u = lc_detect_and_filter(u_prev, a_k, obs, state, cfg)
    alpha = smoothing_factor(s, v, dv, cfg)
    assert 0.0 <= alpha < 1.0
    assert abs(u - u_prev) <= abs(a_k - u_prev) + 1e-12


def test_filter_activates_on_gap_jump_and_releases():
    cfg = LcConfig()
    state = LcFilterState()
    far = LocalObservation(v=20.0, v_lead=20.0, h=70.0, minicar=True)
    u = lc_detect_and_filter(None, 0.0, far, state, cfg)
    near = LocalObservation(v=20.0, v_lead=21.0, h=45.0, minicar=True)
    u = lc_detect_and_filter(u, -2.0, near, state, cfg)
    assert state.active and state.activations == 1
    assert -2.0 < u < 0.0
    for _ in range(500):
        u = lc_detect_and_filter(u, -2.0, near, state, cfg)
        if not state.active:
            break
    assert not state.active and abs(u + 2.0) <= cfg.eps


def test_unsafe_cut_in_does_not_activate():
    cfg = LcConfig()
    state = LcFilterState()
    u = lc_detect_and_filter(None, 0.0, LocalObservation(v=20.0, v_lead=20.0, h=70.0, minicar=True), state, cfg)
    # closing at 10 m/s with 15 m: TTC 1.5 s is below C_safe
    lc_detect_and_filter(u, -3.0, LocalObservation(v=20.0, v_lead=10.0, h=15.0, minicar=True), state, cfg)
    assert not state.active
    assert not lc_safe(15.0, 20.0, -10.0, cfg)


def test_config_validation():
    with pytest.raises(ValueError):
        BaseControllerConfig(a_min=1.0)
    with pytest.raises(ValueError):
        LcConfig(alpha_max=1.0)
    with pytest.raises(ValueError):
        LcConfig(c=1.5)


@settings(max_examples=40, deadline=None)
@given(st.floats(5.0, 30.0), st.lists(st.tuples(st.floats(0.0, 60.0), st.floats(-6.0, 0.0),
                                                 st.floats(0.5, 10.0)), min_size=1, max_size=4))
def test_closed_loop_gap_stays_above_safety_distance(v0, brakes):
    """Adversarial leader braking no harder than a_l_min; gap must stay above s0."""
    dt = 0.1
    ctrl = AccelController(lc=None)
    gap0 = ctrl.cfg.s0 + v0 * v0 * (1 / 6 - 1 / 12) + 1.0
    xl, vl, x, v = gap0 + 5.0, v0, 0.0, v0
    min_gap = math.inf
    for k in range(900):
        t = k * dt
        al = sum(a for t0, a, d in brakes if t0 <= t < t0 + d)
        al = max(al, -6.0)
        gap = xl - x - 5.0
        min_gap = min(min_gap, gap)
        obs = LocalObservation(v=v, v_lead=vl, a_lead=al, h=gap, v_target=30.0, minicar=gap <= 80.0)
        if not obs.minicar:
            obs = LocalObservation(v=v, v_target=30.0)
        u = ctrl(obs)
        # exact ballistic update with stopping
        def move(pos, vel, acc):
            if vel + acc * dt < 0:
                return pos + vel * vel / (2 * -acc), 0.0
            return pos + vel * dt + 0.5 * acc * dt * dt, vel + acc * dt
        xl, vl = move(xl, vl, al)
        x, v = move(x, v, u)
    assert min_gap >= ctrl.cfg.s0 - 1e-6
