import numpy as np
import pytest

from megacontroller.energy import default_model, fuel_economy, fuel_rate
from megacontroller.kpi import (
    KPI_KEYS,
    crossing_count,
    crossing_times,
    evaluate_matrix,
    format_report_text,
    kpi_positions,
    network_speed,
    percent_delta,
    platoon_fuel_economy,
    throughput,
    write_report_csv,
    write_report_html,
)
from megacontroller.sim import CollisionError, Trajectories, preset


def make_traj(speeds, dt=0.1, n=101, gaps=30.0):
    t = np.round(np.arange(n) * dt, 10)
    ids = ["leader"] + [f"hv{i:02d}" for i in range(1, len(speeds))]
    kinds = {vid: ("leader" if vid == "leader" else "human") for vid in ids}
    tr = Trajectories(dt, ids, kinds, {}, {}, {}, {}, {})
    for i, (vid, v) in enumerate(zip(ids, speeds)):
        tr.t[vid] = t
        tr.x[vid] = -i * gaps + v * t
        tr.v[vid] = np.full(n, v)
        tr.a[vid] = np.zeros(n)
        tr.engaged[vid] = np.zeros(n, dtype=bool)
    return tr


def test_crossing_times_linear_interpolation():
    t = np.array([0.0, 1.0, 2.0])
    x = np.array([0.0, 10.0, 20.0])
    assert np.allclose(crossing_times(t, x, 15.0), [1.5])
    assert crossing_times(t, x, 25.0).size == 0


def test_network_speed_excludes_leader_and_counts_stops():
    tr = make_traj([30.0, 10.0, 0.0])
    assert network_speed(tr) == pytest.approx(5.0)
    assert network_speed(tr, include_leader=True) == pytest.approx(40.0 / 3.0)


def test_fuel_economy_constant_speed():
    tr = make_traj([20.0, 20.0, 20.0])
    m = default_model()
    rate = fuel_rate(20.0, 0.0, 0.0, m)
    expected = fuel_economy(2 * rate * 10.0, 2 * 200.0)
    assert platoon_fuel_economy(tr, m) == pytest.approx(expected, rel=1e-12)


def test_throughput_counts():
    tr = make_traj([20.0, 20.0, 20.0], n=101)
    pos = kpi_positions(0.0, 200.0, 5)
    assert np.allclose(pos, [200 / 6 * k for k in range(1, 6)])
    # both followers cross x=100 only if they get there: hv01 starts at -30, reaches 170
    assert crossing_count(tr, 100.0, 0.0, 10.0) == 2
    assert throughput(tr, "shockwave", [100.0]) == pytest.approx(2 / 10.0)
    with pytest.raises(ValueError):
        throughput(tr, "bottleneck")
    with pytest.raises(ValueError):
        throughput(tr, "freeflow")


def test_percent_delta():
    assert percent_delta(110.0, 100.0) == pytest.approx(10.0)
    assert percent_delta(0.0, 0.0) == 0.0


def test_evaluate_matrix_with_stub_runner(tmp_path):
    vals = {"baseline": 20.0, "none": 22.0, "full": 25.0}

    def runner(sc, planner):
        if sc.av_controller == "acc" and planner == "full":
            raise CollisionError("boom")
        speed = vals["baseline"] if "av" not in sc.layout else vals[planner]
        res = type("R", (), {})()
        res.trajectories = make_traj([speed, speed, speed])
        res.scenario = sc
        return res

    def factory(ctrl, seed):
        sc = preset("freeflow", n_av=1, n_human=1, av_controller=ctrl, seed=seed, duration=10.0)
        return sc, preset("freeflow", n_av=0, n_human=2, seed=seed, duration=10.0)

    rows = evaluate_matrix({"ff": factory}, ["none", "full"], ["accel", "acc"], seeds=(0, 1), runner=runner)
    assert [(r.planner, r.controller, r.status) for r in rows] == [
        ("baseline", "none", "ok"), ("none", "accel", "ok"), ("none", "acc", "ok"),
        ("full", "accel", "ok"), ("full", "acc", "FAILED")]
    assert rows[3].deltas["network_speed_mps"] == pytest.approx(25.0)
    write_report_csv(tmp_path / "r.csv", rows)
    write_report_html(tmp_path / "r.html", rows)
    assert "FAILED" in (tmp_path / "r.csv").read_text() and "<table" in (tmp_path / "r.html").read_text()
    text = format_report_text(rows)
    assert all(k in text for k in ("baseline", "FAILED"))
    assert set(rows[1].values) == set(KPI_KEYS)
