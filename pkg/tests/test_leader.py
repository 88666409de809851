import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from megacontroller.leader import (
    LeaderTrajectory,
    WaveField,
    constant_speed,
    load_leader_trajectory,
    save_leader,
    speed_pulse,
    stop_and_go,
)


def test_csv_round_trip(tmp_path):
    traj = stop_and_go(60.0, seed=2)
    path = tmp_path / "lead.csv"
    save_leader(path, traj)
    back = load_leader_trajectory(path)
    assert np.array_equal(back.t, traj.t) and np.array_equal(back.v, traj.v)


def test_grade_column_round_trip(tmp_path):
    t = np.round(np.arange(11) * 0.1, 10)
    traj = LeaderTrajectory(t, np.full(11, 10.0), np.linspace(0, 0.01, 11))
    save_leader(tmp_path / "g.csv", traj)
    assert np.array_equal(load_leader_trajectory(tmp_path / "g.csv").grade, traj.grade)


def test_validation_errors(tmp_path):
    t = np.round(np.arange(5) * 0.1, 10)
    with pytest.raises(ValueError, match="negative"):
        LeaderTrajectory(t, np.array([1.0, 1.0, -1.0, 1.0, 1.0]))
    with pytest.raises(ValueError, match="gap"):
        LeaderTrajectory(np.array([0.0, 0.1, 0.5]), np.ones(3))
    with pytest.raises(ValueError, match="10 Hz"):
        LeaderTrajectory(np.array([0.0, 0.1, 0.25]), np.ones(3))
    with pytest.raises(ValueError, match="increasing"):
        LeaderTrajectory(np.array([0.0, 0.1, 0.1]), np.ones(3))
    (tmp_path / "bad.csv").write_text("time,speed\n0,1\n")
    with pytest.raises(ValueError, match="columns"):
        load_leader_trajectory(tmp_path / "bad.csv")


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 1000), st.floats(1.0, 10.0), st.floats(15.0, 35.0))
def test_stop_and_go_bounds_and_rates(seed, v_low, v_high):
    traj = stop_and_go(300.0, v_high=v_high, v_low=v_low, seed=seed)
    assert traj.t.size == 3001
    assert np.all(traj.v >= v_low - 1e-9) and np.all(traj.v <= v_high + 1e-9)
    acc = np.diff(traj.v) / 0.1
    assert acc.min() >= -1.5 - 1e-6 and acc.max() <= 1.0 + 1e-6


def test_positions_trapezoid():
    traj = constant_speed(10.0, 12.0)
    assert traj.positions(5.0)[-1] == pytest.approx(5.0 + 120.0)


def test_speed_pulse_depth():
    traj = speed_pulse(60.0, 10.0, 2.0, t_start=5.0, length=10.0)
    assert traj.v.min() == pytest.approx(8.0)
    assert traj.v[0] == traj.v[-1] == 10.0


def test_wave_field_follows_leader_and_travels_upstream():
    traj = stop_and_go(200.0, v_high=20.0, v_low=5.0, seed=1)
    field = WaveField(traj, 0.0, -5.0)
    x = traj.positions()
    k = np.arange(0, 2001, 50)
    assert np.allclose(field.speed(x[k], traj.t[k]), traj.v[k])
    # the leader's state at tau is seen at x_L(tau) - 5 (t - tau) at a later time t
    tau, t = traj.t[700], traj.t[700] + 40.0
    assert field.speed(x[700] - 5.0 * 40.0, t) == pytest.approx(traj.v[700])
