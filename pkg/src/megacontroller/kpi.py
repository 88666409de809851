"""Key performance indicators and the scenario x planner x controller matrix."""

from __future__ import annotations

import csv
import html
import math
from dataclasses import dataclass, field

import numpy as np

from .energy import EnergyModel, default_model, fuel_economy, fuel_rate
from .sim import CollisionError, Trajectories

N_POSITIONS = 5
FINAL_WINDOW = 0.2  # share of the run used for the bottleneck steady state


def _controlled(traj: Trajectories, include_leader: bool):
    return [vid for vid in traj.ids if include_leader or traj.kinds[vid] != "leader"]


def vehicle_fuel(traj: Trajectories, vid: str, model: EnergyModel) -> float:
    """Fuel [g] of one vehicle: rate at each tick times dt, using the applied accelerations."""
    v, a = traj.v[vid][:-1], traj.a[vid][:-1]
    if v.size == 0:
        return 0.0
    dt = np.diff(traj.t[vid])
    return float(np.sum(fuel_rate(v, a, 0.0, model) * dt))


def platoon_fuel_economy(traj: Trajectories, model: EnergyModel | None = None,
                         include_leader: bool = False) -> float:
    """Miles per gallon over the whole platoon (distance-weighted)."""
    model = model or default_model()
    ids = _controlled(traj, include_leader)
    fuel = sum(vehicle_fuel(traj, vid, model) for vid in ids)
    dist = sum(float(traj.x[vid][-1] - traj.x[vid][0]) for vid in ids)
    return fuel_economy(fuel, dist)


def network_speed(traj: Trajectories, include_leader: bool = False) -> float:
    """Total distance over total driving time; stopped time counts."""
    ids = _controlled(traj, include_leader)
    dist = sum(float(traj.x[vid][-1] - traj.x[vid][0]) for vid in ids)
    time_ = sum(float(traj.t[vid][-1] - traj.t[vid][0]) for vid in ids)
    if time_ <= 0:
        raise ValueError("no driving time in the run")
    return dist / time_


def crossing_times(t: np.ndarray, x: np.ndarray, position: float) -> np.ndarray:
    """Linear-interpolated times at which a trajectory first reaches ``position`` going forward."""
    idx = np.flatnonzero((x[:-1] < position) & (x[1:] >= position))
    frac = (position - x[idx]) / (x[idx + 1] - x[idx])
    return t[idx] + frac * (t[idx + 1] - t[idx])


def crossing_count(traj: Trajectories, position: float, t0: float, t1: float,
                   include_leader: bool = False) -> int:
    n = 0
    for vid in _controlled(traj, include_leader):
        ct = crossing_times(traj.t[vid], traj.x[vid], position)
        n += int(np.count_nonzero((ct >= t0) & (ct < t1)))
    return n


def kpi_positions(x_from: float, x_to: float, n: int = N_POSITIONS) -> np.ndarray:
    """n positions splitting [x_from, x_to] into n + 1 equal parts."""
    return x_from + (x_to - x_from) * np.arange(1, n + 1) / (n + 1)


def throughput(traj: Trajectories, kind: str, positions=None, bottleneck_end: float | None = None,
               window: float = FINAL_WINDOW, include_leader: bool = False) -> float:
    """Vehicles per second crossing the measurement positions.

    shockwave / freeflow: mean over ``positions`` of crossings per unit time
    over the whole run. bottleneck: crossings just downstream of the
    bottleneck during the final ``window`` share of the run.
    """
    t_start = min(float(t[0]) for t in traj.t.values())
    t_end = max(float(t[-1]) for t in traj.t.values())
    duration = t_end - t_start
    if kind == "bottleneck":
        if bottleneck_end is None:
            raise ValueError("bottleneck throughput needs the bottleneck end position")
        span = window * duration
        if span <= 0 or span > duration:
            raise ValueError("run shorter than the averaging window")
        n = crossing_count(traj, bottleneck_end + 1.0, t_end - span, t_end + 1e-9, include_leader)
        return n / span
    if positions is None:
        raise ValueError("throughput needs measurement positions")
    if duration <= 0:
        raise ValueError("run shorter than the averaging window")
    counts = [crossing_count(traj, p, t_start, t_end + 1e-9, include_leader) for p in positions]
    return float(np.mean(counts)) / duration


def default_positions(result) -> np.ndarray:
    """Five positions spread over the stretch the leader drives in the run."""
    leader = result.scenario.leader_trajectory()
    end = float(np.interp(result.scenario.duration, leader.t, leader.positions()))
    return kpi_positions(0.0, end)


def run_kpis(result, model: EnergyModel | None = None) -> dict:
    traj = result.trajectories
    sc = result.scenario
    bn_end = sc.bottleneck.x_end if sc.bottleneck is not None else None
    return {
        "fuel_economy_mpg": platoon_fuel_economy(traj, model),
        "throughput_vps": throughput(traj, sc.kind, default_positions(result), bn_end),
        "network_speed_mps": network_speed(traj),
    }


KPI_KEYS = ("fuel_economy_mpg", "throughput_vps", "network_speed_mps")


@dataclass
class KpiRow:
    scenario: str
    planner: str
    controller: str
    seed: int
    status: str  # "ok" or "FAILED"
    values: dict = field(default_factory=dict)
    deltas: dict = field(default_factory=dict)  # percent vs the scenario baseline


def percent_delta(value: float, base: float) -> float:
    if base == 0:
        return 0.0 if value == 0 else math.inf
    return 100.0 * (value - base) / base


def evaluate_matrix(scenarios: dict, planners, controllers, seeds=(0,), runner=None,
                    model: EnergyModel | None = None) -> list:
    """Run every (scenario, planner, controller) cell plus one 0-AV baseline per scenario.

    ``scenarios`` maps a name to a factory ``f(av_controller, seed) -> (Scenario, baseline Scenario)``.
    KPIs are averaged over seeds. A collision marks the cell FAILED.
    """
    from .sim import closed_loop_run

    runner = runner or closed_loop_run
    rows = []
    for name, factory in scenarios.items():
        base_vals = []
        for seed in seeds:
            _, base_sc = factory(controllers[0], seed)
            base_vals.append(run_kpis(runner(base_sc, "none"), model))
        base = {k: float(np.mean([b[k] for b in base_vals])) for k in KPI_KEYS}
        rows.append(KpiRow(name, "baseline", "none", len(seeds), "ok", base, {k: 0.0 for k in KPI_KEYS}))
        for planner in planners:
            for ctrl in controllers:
                vals = []
                status = "ok"
                for seed in seeds:
                    sc, _ = factory(ctrl, seed)
                    try:
                        vals.append(run_kpis(runner(sc, planner), model))
                    except CollisionError:
                        status = "FAILED"
                        break
                if status == "ok":
                    mean = {k: float(np.mean([v[k] for v in vals])) for k in KPI_KEYS}
                    rows.append(KpiRow(name, planner, ctrl, len(seeds), "ok", mean,
                                       {k: percent_delta(mean[k], base[k]) for k in KPI_KEYS}))
                else:
                    rows.append(KpiRow(name, planner, ctrl, len(seeds), "FAILED"))
    return rows


def write_report_csv(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["scenario", "planner", "controller", "seeds", "status"] + list(KPI_KEYS)
                   + [f"delta_pct_{k}" for k in KPI_KEYS])
        for r in rows:
            w.writerow([r.scenario, r.planner, r.controller, r.seed, r.status]
                       + [repr(r.values[k]) if k in r.values else "" for k in KPI_KEYS]
                       + [repr(r.deltas[k]) if k in r.deltas else "" for k in KPI_KEYS])


def _cell_color(delta: float) -> str:
    # green when better, red when worse; fuel economy, throughput and speed are all higher-is-better
    if not math.isfinite(delta):
        return "#cccccc"
    s = max(-1.0, min(1.0, delta / 10.0))
    if s >= 0:
        return f"rgb({int(255 * (1 - s))},255,{int(255 * (1 - s))})"
    return f"rgb(255,{int(255 * (1 + s))},{int(255 * (1 + s))})"


def write_report_html(path, rows):
    out = ["<!DOCTYPE html><html><head><meta charset='utf-8'><title>KPI report</title>",
           "<style>td,th{padding:4px 8px;border:1px solid #999;font-family:monospace}</style>",
           "</head><body><table>",
           "<tr><th>scenario</th><th>planner</th><th>controller</th><th>status</th>"
           + "".join(f"<th>{k}</th>" for k in KPI_KEYS) + "</tr>"]
    for r in rows:
        cells = []
        for k in KPI_KEYS:
            if r.status != "ok":
                cells.append("<td style='background:#888'>FAILED</td>")
                continue
            d = r.deltas[k]
            cells.append(f"<td style='background:{_cell_color(d)}'>{r.values[k]:.4g} ({d:+.2f}%)</td>")
        out.append(f"<tr><td>{html.escape(r.scenario)}</td><td>{html.escape(r.planner)}</td>"
                   f"<td>{html.escape(r.controller)}</td><td>{r.status}</td>{''.join(cells)}</tr>")
    out.append("</table></body></html>")
    with open(path, "w") as fh:
        fh.write("\n".join(out))


def format_report_text(rows) -> str:
    lines = [f"{'scenario':<12}{'planner':<10}{'controller':<12}{'status':<8}"
             + "".join(f"{k:>26}" for k in KPI_KEYS)]
    for r in rows:
        if r.status != "ok":
            lines.append(f"{r.scenario:<12}{r.planner:<10}{r.controller:<12}{r.status:<8}")
            continue
        lines.append(f"{r.scenario:<12}{r.planner:<10}{r.controller:<12}{r.status:<8}"
                     + "".join(f"{r.values[k]:>16.4f} ({r.deltas[k]:+6.2f}%)" for k in KPI_KEYS))
    return "\n".join(lines)
