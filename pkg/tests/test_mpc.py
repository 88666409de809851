import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from megacontroller.leader import constant_speed, stop_and_go
from megacontroller.optim.mpc import QpProblem, leader_predict, mpc_rollout, mpc_solve


@settings(max_examples=30)
@given(st.integers(1, 12), st.floats(0.05, 1.0), st.floats(0.0, 30.0),
       st.lists(st.floats(-3.0, 1.5), min_size=12, max_size=12))
def test_state_maps_match_ballistic_integration(N, dt, v0, u):
    u = np.array(u[:N])
    prob = QpProblem(N, dt, 3.0, v0, np.full(N, 1e6))
    Mx, cx, Mv, cv = prob.state_maps()
    x, v = 3.0, v0
    xs, vs = [], []
    for uk in u:
        x, v = x + v * dt + 0.5 * uk * dt * dt, v + uk * dt
        xs.append(x)
        vs.append(v)
    assert np.allclose(Mx @ u + cx, xs, rtol=1e-12, atol=1e-9)
    assert np.allclose(Mv @ u + cv, vs, rtol=1e-12, atol=1e-12)


def test_free_road_needs_no_acceleration():
    sol = mpc_solve(QpProblem(10, 0.2, 0.0, 20.0, np.full(10, 1e6)))
    assert sol.status == "optimal" and np.allclose(sol.u, 0.0, atol=1e-12)


def test_closing_gap_forces_braking_and_is_feasible():
    N, dt = 20, 0.2
    t = dt * np.arange(1, N + 1)
    prob = QpProblem(N, dt, 0.0, 20.0, 60.0 + 10.0 * t)
    sol = mpc_solve(prob)
    assert sol.status == "optimal" and sol.u[0] < 0
    assert prob.feasible(sol.u, 1e-9)
    assert max(sol.kkt.values()) <= 1e-8


def test_terminal_speed_weight_pulls_toward_reference():
    lead = np.full(10, 1e6)
    plain = mpc_solve(QpProblem(10, 0.5, 0.0, 20.0, lead))
    pulled = mpc_solve(QpProblem(10, 0.5, 0.0, 20.0, lead, v_ref=25.0, w_terminal=10.0))
    assert plain.v[-1] == pytest.approx(20.0) and pulled.v[-1] > 22.0


def test_infeasible_falls_back_to_base_controller(caplog):
    # leader already inside the spacing constraint: no admissible sequence
    prob = QpProblem(5, 0.2, 0.0, 25.0, np.full(5, 8.0))
    sol = mpc_solve(prob)
    assert sol.status == "fallback" and np.all(sol.u == sol.u[0])
    assert sol.u[0] == -3.0
    assert "falling back" in caplog.text


def test_problem_validation():
    with pytest.raises(ValueError):
        QpProblem(0, 0.1, 0.0, 0.0, np.zeros(0))
    with pytest.raises(ValueError):
        QpProblem(3, 0.1, 0.0, 0.0, np.zeros(2))
    with pytest.raises(ValueError):
        QpProblem(3, 0.1, 0.0, 0.0, np.zeros(3), a_min=1.0, a_max=0.0)
    with pytest.raises(ValueError):
        QpProblem(3, 0.1, 0.0, 0.0, np.zeros(3), w_terminal=1.0).matrices()


def test_leader_predict_closed_forms():
    t = np.linspace(0.0, 2.0, 9)
    # short horizon: constant acceleration
    assert np.allclose(leader_predict(10.0, 20.0, -1.0, t), 10.0 + 20.0 * t - 0.5 * t * t)
    # a braking leader halts at v^2 / (2|a|)
    tt = np.array([0.5, 1.0, 1.9])
    assert np.allclose(leader_predict(0.0, 4.0, -4.0, tt), [4.0 * 0.5 - 2.0 * 0.25, 2.0, 2.0])
    # beyond the blend: current speed (no plan) or the plan speed
    far = np.array([5.0, 8.0])
    assert np.allclose(leader_predict(0.0, 20.0, 1.0, far), 20.0 * far)
    assert np.allclose(leader_predict(0.0, 20.0, 1.0, far, plan=lambda x: 15.0), 15.0 * far)
    # halfway through the blend both predictions weigh equally
    mid = np.array([3.0])
    kin = 20.0 * 3.0 + 0.5 * 9.0
    assert leader_predict(0.0, 20.0, 1.0, mid)[0] == pytest.approx(0.5 * kin + 0.5 * 60.0)
    with pytest.raises(ValueError):
        leader_predict(0.0, 1.0, 0.0, [-1.0])


def test_rollout_behind_constant_leader_is_idle():
    lead = constant_speed(20.0, 20.0)
    ro = mpc_rollout(lead.t, lead.positions(40.0), 0.0, 20.0, N=20)
    assert np.max(np.abs(ro.u)) <= 1e-12 and ro.fallbacks == 0 and ro.prediction_rmse == 0.0


def test_rollout_with_predicted_leader_reports_prediction_error():
    lead = stop_and_go(60.0, v_high=20.0, v_low=5.0, seed=0)
    exact = mpc_rollout(lead.t, lead.positions(40.0), 0.0, 20.0, N=30)
    pred = mpc_rollout(lead.t, lead.positions(40.0), 0.0, 20.0, N=30, exact_prediction=False)
    assert exact.min_gap_margin >= -1e-9 and exact.prediction_rmse == 0.0
    assert pred.prediction_rmse > 0.0
    assert pred.min_gap_margin > -1.0  # prediction errors cost at most a small constraint violation
