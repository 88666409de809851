"""megactl: command-line entry point.

Subcommands: simulate, sweep, macro, optimize, gen-leader, benchmark.
Exit codes: 0 success, 1 configuration error, 2 collision, 3 infeasible or
failed optimization. Outputs go to --out, or to a directory under
$MEGACTL_OUT (default ./runs) named after the command.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import yaml

from .energy import VEHICLE_CLASSES, default_model
from .kpi import KPI_KEYS, KpiRow, format_report_text, percent_delta, run_kpis, write_report_csv, write_report_html
from .leader import save_leader, stop_and_go

EXIT_OK, EXIT_CONFIG, EXIT_COLLISION, EXIT_INFEASIBLE = 0, 1, 2, 3
OUT_ENV = "MEGACTL_OUT"

log = logging.getLogger("megactl")


class ConfigError(ValueError):
    pass


def _out_dir(arg: str | None, default_name: str) -> Path:
    if arg:
        return Path(arg)
    return Path(os.environ.get(OUT_ENV, "runs")) / default_name


def _dump_yaml(path: Path, data):
    path.write_text(yaml.safe_dump(data, sort_keys=True))


def _load_yaml(path) -> dict:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file {p} does not exist")
    data = yaml.safe_load(p.read_text()) or {}
    if not isinstance(data, dict):
        raise ConfigError(f"{p}: expected a mapping at the top level")
    return data


# -- run configuration --------------------------------------------------------------


@dataclass
class RunConfig:
    scenario: str = "shockwave"  # preset name (shockwave, freeflow, bottleneck) or scenario YAML path
    controller: str = "accel"
    planner: str = "full"
    energy_class: str = "midsize_sedan"
    seed: int = 0
    n_av: int = 1
    n_human: int | None = None
    pattern: str = "front"
    duration: float | None = None
    planner_params: dict = field(default_factory=dict)

    def validate(self):
        from .sim import AV_CONTROLLERS, PLANNER_VARIANTS, SCENARIO_KINDS

        if self.controller not in AV_CONTROLLERS:
            raise ConfigError(f"unknown controller {self.controller!r}; choose from {AV_CONTROLLERS}")
        if self.planner not in PLANNER_VARIANTS:
            raise ConfigError(f"unknown planner {self.planner!r}; choose from {PLANNER_VARIANTS}")
        if self.energy_class not in VEHICLE_CLASSES:
            raise ConfigError(f"unknown energy class {self.energy_class!r}; choose from {VEHICLE_CLASSES}")
        if self.scenario not in SCENARIO_KINDS and not Path(self.scenario).exists():
            raise ConfigError(f"scenario {self.scenario!r} is neither a preset nor an existing file")
        return self

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown run config keys {sorted(unknown)}")
        return cls(**d)

    def build(self):
        """(scenario, planner config) for this run."""
        from .planner import PlannerConfig
        from .sim import load_scenario, preset

        if Path(self.scenario).exists() and self.scenario not in ("shockwave", "freeflow", "bottleneck"):
            sc = load_scenario(self.scenario)
            sc = replace(sc, av_controller=self.controller, seed=self.seed,
                         duration=self.duration or sc.duration)
        else:
            sc = preset(self.scenario, self.n_av, self.n_human, self.controller, self.seed, self.pattern,
                        self.duration)
        try:
            pcfg = PlannerConfig(**self.planner_params)
        except TypeError as exc:
            raise ConfigError(f"bad planner_params: {exc}") from exc
        return sc, pcfg


def _run(cfg: RunConfig, baseline: bool = False):
    from .sim import baseline_scenario, closed_loop_run

    sc, pcfg = cfg.build()
    if baseline:
        return closed_loop_run(baseline_scenario(sc), "none")
    return closed_loop_run(sc, cfg.planner, pcfg)


# -- simulate -------------------------------------------------------------------------


def cmd_simulate(args) -> int:
    from .sim import SimulationCollision, baseline_scenario, scenario_to_dict

    base = _load_yaml(args.config) if args.config else {}
    overrides = {k: getattr(args, k) for k in ("scenario", "controller", "planner", "energy_class", "seed",
                                               "n_av", "n_human", "pattern", "duration")
                 if getattr(args, k) is not None}
    cfg = RunConfig.from_dict({**base, **overrides}).validate()
    sc, _ = cfg.build()
    out = _out_dir(args.out, f"simulate-{sc.name}-{cfg.controller}-{cfg.planner}-s{cfg.seed}")
    out.mkdir(parents=True, exist_ok=True)
    _dump_yaml(out / "config.yaml", asdict(cfg))
    _dump_yaml(out / "scenario.yaml", scenario_to_dict(sc))
    model = default_model(cfg.energy_class)
    try:
        res = _run(cfg)
    except SimulationCollision as exc:
        exc.result.write(out)
        print(f"collision: {exc}", file=sys.stderr)
        return EXIT_COLLISION
    res.write(out)
    kpis = run_kpis(res, model)
    summary = {"kpis": kpis}
    if args.baseline:
        from .sim import closed_loop_run

        base_k = run_kpis(closed_loop_run(baseline_scenario(sc), "none"), model)
        summary["baseline"] = base_k
        summary["delta_pct"] = {k: percent_delta(kpis[k], base_k[k]) for k in KPI_KEYS}
    _dump_yaml(out / "kpis.yaml", summary)
    for k in KPI_KEYS:
        line = f"{k:<20} {kpis[k]:12.5f}"
        if args.baseline:
            line += f"   baseline {summary['baseline'][k]:12.5f}   delta {summary['delta_pct'][k]:+7.2f}%"
        print(line)
    print(f"artifacts: {out}")
    return EXIT_OK


# -- sweep ------------------------------------------------------------------------------


def _cell_name(scenario: str, planner: str, controller: str, seed: int) -> str:
    stem = Path(scenario).stem if Path(scenario).suffix else scenario
    return f"{stem}__{planner}__{controller}__s{seed}"


def _run_cell(job: dict) -> dict:
    """Run one sweep cell and return its marker record (module-level for process pools)."""
    from .sim import CollisionError

    cfg = RunConfig.from_dict(job["config"])
    try:
        res = _run(cfg, baseline=job["baseline"])
        kpis = run_kpis(res, default_model(cfg.energy_class))
        return {"status": "ok", "kpis": kpis}
    except CollisionError as exc:
        return {"status": "FAILED", "error": str(exc)}


def sweep_jobs(spec: dict) -> list:
    keys = {"scenarios", "planners", "controllers", "seeds", "n_av", "n_human", "pattern", "duration",
            "energy_class", "planner_params"}
    unknown = set(spec) - keys
    if unknown:
        raise ConfigError(f"unknown sweep keys {sorted(unknown)}")
    common = {k: spec[k] for k in ("n_av", "n_human", "pattern", "duration", "energy_class", "planner_params")
              if k in spec}
    jobs = []
    for scen in spec.get("scenarios", ["shockwave"]):
        for seed in spec.get("seeds", [0]):
            controllers = spec.get("controllers", ["accel"])
            cfg = RunConfig.from_dict({**common, "scenario": scen, "controller": controllers[0], "planner": "none",
                                       "seed": seed}).validate()
            jobs.append({"name": _cell_name(scen, "baseline", "none", seed), "scenario": scen, "planner": "baseline",
                         "controller": "none", "seed": seed, "baseline": True, "config": asdict(cfg)})
            for planner in spec.get("planners", ["full"]):
                for ctrl in controllers:
                    cfg = RunConfig.from_dict({**common, "scenario": scen, "controller": ctrl, "planner": planner,
                                               "seed": seed}).validate()
                    jobs.append({"name": _cell_name(scen, planner, ctrl, seed), "scenario": scen,
                                 "planner": planner, "controller": ctrl, "seed": seed, "baseline": False,
                                 "config": asdict(cfg)})
    return jobs


def aggregate_cells(jobs: list, records: dict) -> list:
    """KPI rows (seed-averaged) with deltas against each scenario's baseline."""
    groups: dict = {}
    for job in jobs:
        groups.setdefault((job["scenario"], job["planner"], job["controller"]), []).append(records[job["name"]])
    rows = []
    base_by_scen = {}
    for (scen, planner, ctrl), recs in groups.items():
        if planner == "baseline":
            vals = {k: float(np.mean([r["kpis"][k] for r in recs])) for k in KPI_KEYS} \
                if all(r["status"] == "ok" for r in recs) else None
            base_by_scen[scen] = vals
    for (scen, planner, ctrl), recs in groups.items():
        label = Path(scen).stem if Path(scen).suffix else scen
        if any(r["status"] != "ok" for r in recs):
            rows.append(KpiRow(label, planner, ctrl, len(recs), "FAILED"))
            continue
        vals = {k: float(np.mean([r["kpis"][k] for r in recs])) for k in KPI_KEYS}
        base = base_by_scen.get(scen)
        deltas = {k: percent_delta(vals[k], base[k]) if base else math.nan for k in KPI_KEYS}
        rows.append(KpiRow(label, planner, ctrl, len(recs), "ok", vals, deltas))
    return rows


def cmd_sweep(args) -> int:
    spec = _load_yaml(args.spec) if args.spec else {}
    for key in ("scenarios", "planners", "controllers"):
        val = getattr(args, key)
        if val:
            spec[key] = val.split(",")
    if args.seeds:
        spec["seeds"] = [int(s) for s in args.seeds.split(",")]
    if args.duration is not None:
        spec["duration"] = args.duration
    jobs = sweep_jobs(spec)
    out = _out_dir(args.out, "sweep")
    cells = out / "cells"
    cells.mkdir(parents=True, exist_ok=True)
    _dump_yaml(out / "sweep.yaml", spec)
    records = {}
    todo = []
    for job in jobs:
        marker = cells / f"{job['name']}.json"
        if marker.exists():
            records[job["name"]] = json.loads(marker.read_text())
        else:
            todo.append(job)
    print(f"{len(jobs)} cells, {len(jobs) - len(todo)} already complete")

    def finish(job, rec):
        records[job["name"]] = rec
        tmp = cells / f"{job['name']}.json.tmp"
        tmp.write_text(json.dumps(rec, sort_keys=True))
        tmp.replace(cells / f"{job['name']}.json")  # marker appears only once complete
        print(f"  {job['name']}: {rec['status']}")

    if args.jobs > 1 and len(todo) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            for job, rec in zip(todo, pool.map(_run_cell, todo)):
                finish(job, rec)
    else:
        for job in todo:
            finish(job, _run_cell(job))
    rows = aggregate_cells(jobs, records)
    write_report_csv(out / "report.csv", rows)
    write_report_html(out / "report.html", rows)
    print(format_report_text(rows))
    return EXIT_OK


# -- macro ------------------------------------------------------------------------------


def cmd_macro(args) -> int:
    from .macro import bulk_fields, edie_fields, write_field_csv, write_heatmap_svg
    from .sim import load_run

    run = Path(args.run)
    if not (run / "trajectories.csv").exists():
        raise ConfigError(f"no run artifact at {run}")
    traj, _ = load_run(run)
    model = default_model(args.energy_class)
    grid = edie_fields(traj, model, args.h_t, args.h_x)
    out = Path(args.out) if args.out else run / "macro"
    out.mkdir(parents=True, exist_ok=True)
    fields_ = {"rho": grid.rho, "q": grid.q, "f": grid.f, **bulk_fields(grid)}
    overlays = [(vid, traj.t[vid], traj.x[vid], traj.engaged[vid]) for vid in traj.av_ids()]
    for name in ("rho", "q", "u", "phi", "psi"):
        write_field_csv(out / f"{name}.csv", fields_[name], grid, name)
        write_heatmap_svg(out / f"{name}.svg", fields_[name], grid, name, overlays)
    write_field_csv(out / "f.csv", grid.f, grid, "f")
    print(f"grid {grid.shape[0]} x {grid.shape[1]} boxes (h_t={args.h_t} s, h_x={args.h_x} m), "
          f"{len(overlays)} AV overlays -> {out}")
    return EXIT_OK


# -- optimize ---------------------------------------------------------------------------


def _ocp_leader(spec: dict):
    from .leader import load_leader_trajectory

    lead = dict(spec.get("leader", {}))
    kind = lead.pop("type", "stop_and_go")
    if kind == "stop_and_go":
        lead.setdefault("duration", 300.0)
        lead.setdefault("v_high", 20.0)
        lead.setdefault("v_low", 5.0)
        return stop_and_go(**lead)
    if kind == "csv":
        return load_leader_trajectory(lead["path"])
    raise ConfigError(f"unknown leader type {kind!r}")


def interleaved_positions(n_vehicles: int, n_av: int) -> list:
    """AV slots spread evenly through the platoon, the first right behind the leader."""
    return sorted({int(math.floor(i * n_vehicles / n_av)) for i in range(n_av)}) if n_av else []


def ocp_problem_from_spec(spec: dict):
    from .cfm import OvmParams
    from .optim.ocp import OCP_BANDO, platoon_problem

    leader = _ocp_leader(spec)
    n = int(spec.get("n_vehicles", 24))
    if "av_positions" in spec:
        positions = [int(i) for i in spec["av_positions"]]
    else:
        positions = interleaved_positions(n, int(spec.get("n_av", 1)))
    if any(not 0 <= i < n for i in positions):
        raise ConfigError("AV positions must lie inside the platoon")
    kw = {k: float(spec[k]) for k in ("h_min", "h_max", "d_min", "d_max", "u_min", "u_max", "penalty") if k in spec}
    if "bando" in spec:
        kw["bando"] = OvmParams(**{**asdict(OCP_BANDO), **spec["bando"]})
    return platoon_problem(leader, positions, n, dt=float(spec.get("dt", 0.2)),
                           n_pieces=spec.get("n_pieces"), piece_length=float(spec.get("piece_length", 10.0)), **kw)


def grad_check_table(prob, seed: int = 0, pieces=(10, 20, 40), horizon: float = 100.0, n_vehicles: int = 5):
    """Adjoint vs central-difference gradients on a reduced copy of ``prob`` at several mesh sizes."""
    from .optim.ocp import gradient_check, human_imitation_controls

    K = min(prob.K, int(round(horizon / prob.dt)))
    n = min(prob.n, n_vehicles)
    kinds = list(prob.kinds[:n])
    if "av" not in kinds:
        kinds[0] = "av"
    rows = []
    rng = np.random.default_rng(seed)
    for n_p in pieces:
        small = replace(prob, leader_x=prob.leader_x[:K + 1], leader_v=prob.leader_v[:K + 1], kinds=tuple(kinds),
                        x0=prob.x0[:n], v0=prob.v0[:n], n_pieces=min(n_p, K))
        u = human_imitation_controls(small)
        z = rng.uniform(-0.05, 0.05, u.shape)
        rows.append(gradient_check(np.clip(u + z - z.mean(axis=0), small.u_min, small.u_max), small))
    return rows


def cmd_optimize(args) -> int:
    from .optim.ocp import OcpInfeasible, ocp_evaluate, ocp_optimize, platoon_fuel, write_schedule_csv, write_trace_csv

    spec = _load_yaml(args.spec) if args.spec else {}
    mode = args.mode or spec.pop("mode", "ocp")
    spec.pop("mode", None)
    if args.n_av is not None:
        spec["n_av"] = args.n_av
        spec.pop("av_positions", None)
    if args.n_vehicles is not None:
        spec["n_vehicles"] = args.n_vehicles
    if args.seed is not None:
        spec.setdefault("leader", {})["seed"] = args.seed
    if args.duration is not None:
        spec.setdefault("leader", {})["duration"] = args.duration
    out = _out_dir(args.out, f"optimize-{mode}")
    out.mkdir(parents=True, exist_ok=True)
    _dump_yaml(out / "config.yaml", {"mode": mode, **spec, **({"iterations": args.iterations}
                                                             if args.iterations is not None else {})})
    if mode == "mpc":
        return _cmd_mpc(spec, out)
    if mode != "ocp":
        raise ConfigError(f"unknown optimize mode {mode!r}")
    prob = ocp_problem_from_spec(spec)
    if args.grad_check:
        rows = grad_check_table(prob, seed=int(spec.get("leader", {}).get("seed", 0)))
        print(f"{'pieces':>7} {'max_abs_err':>14} {'max_rel_err':>14} {'|g_fd|_inf':>14}")
        for r in rows:
            print(f"{r['n_pieces']:>7} {r['max_abs_error']:>14.3e} {r['max_rel_error']:>14.3e} "
                  f"{r['grad_norm_inf']:>14.3e}")
        ok = all(r["max_rel_error"] <= 1e-4 for r in rows)
        print("gradient check " + ("passed" if ok else "FAILED") + " (tolerance 1e-4)")
        return EXIT_OK if ok else EXIT_INFEASIBLE
    iterations = args.iterations if args.iterations is not None else int(spec.get("iterations", 40))
    try:
        res = ocp_optimize(prob, iterations, init=spec.get("init", "human"),
                           gradient=spec.get("gradient", "adjoint"),
                           joint_iterations=spec.get("joint_iterations"))
    except OcpInfeasible as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        for k, v in exc.violations.items():
            print(f"  {k:<24} {v:.4f}", file=sys.stderr)
        return EXIT_INFEASIBLE
    write_schedule_csv(out / "schedule.csv", res, prob)
    write_trace_csv(out / "trace.csv", res)
    model = default_model(spec.get("energy_class", "midsize_sedan"))
    base_ev = ocp_evaluate(np.zeros((prob.n_pieces, 0)), prob.all_human())
    fuel_base = platoon_fuel(base_ev, prob, model)
    fuel_opt = platoon_fuel(res.evaluation, prob, model)
    summary = {
        "n_vehicles": prob.n, "av_positions": prob.av_index.tolist(), "n_pieces": prob.n_pieces,
        "baseline_objective": res.baseline_objective, "initial_objective": res.initial_objective,
        "objective": res.objective, "penalty": res.penalty, "objective_reduction": res.reduction,
        "fuel_baseline_g": fuel_base, "fuel_g": fuel_opt, "fuel_reduction": 1.0 - fuel_opt / fuel_base,
        "violations": res.violations,
    }
    _dump_yaml(out / "summary.yaml", summary)
    print(f"objective {res.objective:.3f} vs all-human {res.baseline_objective:.3f} "
          f"({100 * res.reduction:+.2f}% reduction); start {res.initial_objective:.3f}")
    print(f"energy-model fuel {fuel_opt:.1f} g vs {fuel_base:.1f} g ({100 * summary['fuel_reduction']:+.2f}% "
          f"reduction)")
    print("envelope audit: " + ", ".join(f"{k}={v:.3g}" for k, v in res.violations.items()))
    return EXIT_OK


def _cmd_mpc(spec: dict, out: Path) -> int:
    import csv

    from .leader import constant_speed
    from .optim.mpc import mpc_rollout

    lead = dict(spec.get("leader", {"type": "constant", "v": 20.0, "duration": 60.0}))
    kind = lead.pop("type", "constant")
    if kind == "constant":
        leader = constant_speed(float(lead.get("duration", 60.0)), float(lead.get("v", 20.0)))
    else:
        leader = _ocp_leader({"leader": {"type": kind, **lead}})
    gap0 = float(spec.get("initial_gap", 40.0))
    x_lead = leader.positions(gap0)
    v0 = float(spec.get("v0", leader.v[0]))
    qp_kw = {k: float(spec[k]) for k in ("v_limit", "a_min", "a_max", "s0", "tau", "length") if k in spec}
    ro = mpc_rollout(leader.t, x_lead, 0.0, v0, N=int(spec.get("horizon", 30)),
                     exact_prediction=bool(spec.get("exact_prediction", True)), **qp_kw)
    with open(out / "mpc_rollout.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "x", "v", "u", "leader_x"])
        for k in range(ro.t.size):
            u = ro.u[k] if k < ro.u.size else 0.0
            w.writerow([repr(float(ro.t[k])), repr(float(ro.x[k])), repr(float(ro.v[k])), repr(float(u)),
                        repr(float(ro.leader_x[k]))])
    print(f"max |u| {float(np.max(np.abs(ro.u))):.3e}, min gap margin {ro.min_gap_margin:.3f} m, "
          f"fallbacks {ro.fallbacks}, prediction rmse {ro.prediction_rmse:.3f} m")
    return EXIT_OK if ro.min_gap_margin >= -1e-6 else EXIT_COLLISION


# -- gen-leader / benchmark -------------------------------------------------------------------


def cmd_gen_leader(args) -> int:
    traj = stop_and_go(args.duration, args.v_high, args.v_low, args.seed, args.decel, args.accel)
    out = Path(args.out) if args.out else _out_dir(None, "leaders") / f"stop_and_go_s{args.seed}.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    save_leader(out, traj)
    print(f"{traj.t.size} samples ({traj.duration:.1f} s) -> {out}")
    return EXIT_OK


def cmd_benchmark(args) -> int:
    from .sim import benchmark

    rates = [benchmark(args.vehicles, args.duration, args.planner) for _ in range(args.repeat)]
    best = max(rates)
    print(f"{best:.0f} steps/s ({args.vehicles} vehicles, {args.duration:.0f} s simulated, planner {args.planner})")
    if args.min_rate is not None and best < args.min_rate:
        print(f"below the required {args.min_rate:.0f} steps/s", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


# -- parser -----------------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="megactl", description=__doc__.split("\n")[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="run one scenario and write its artifacts")
    s.add_argument("--config", help="run config YAML (keys of RunConfig)")
    s.add_argument("--scenario", help="preset (shockwave, freeflow, bottleneck) or scenario YAML")
    s.add_argument("--controller", help="accel, accel-nolc or acc")
    s.add_argument("--planner", help="none (open loop), tse or full")
    s.add_argument("--energy-class", dest="energy_class")
    s.add_argument("--seed", type=int)
    s.add_argument("--n-av", dest="n_av", type=int)
    s.add_argument("--n-human", dest="n_human", type=int)
    s.add_argument("--pattern", help="front or interleaved")
    s.add_argument("--duration", type=float)
    s.add_argument("--baseline", action="store_true", help="also run the all-human baseline and print deltas")
    s.add_argument("--out")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("sweep", help="scenario x planner x controller matrix with resumable cells")
    s.add_argument("--spec", help="sweep YAML")
    s.add_argument("--scenarios", help="comma-separated list")
    s.add_argument("--planners")
    s.add_argument("--controllers")
    s.add_argument("--seeds")
    s.add_argument("--duration", type=float)
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--out")
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("macro", help="Edie fields and heatmaps of a run artifact")
    s.add_argument("run", help="run artifact directory")
    s.add_argument("--h-t", dest="h_t", type=float, default=10.0, help="box duration [s]")
    s.add_argument("--h-x", dest="h_x", type=float, default=200.0, help="box length [m]")
    s.add_argument("--energy-class", dest="energy_class", default="midsize_sedan")
    s.add_argument("--out")
    s.set_defaults(func=cmd_macro)

    s = sub.add_parser("optimize", help="platoon trajectory optimization or an MPC rollout")
    s.add_argument("--spec", help="problem YAML")
    s.add_argument("--mode", choices=("ocp", "mpc"))
    s.add_argument("--iterations", type=int)
    s.add_argument("--n-av", dest="n_av", type=int)
    s.add_argument("--n-vehicles", dest="n_vehicles", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--duration", type=float)
    s.add_argument("--grad-check", dest="grad_check", action="store_true",
                   help="compare adjoint and finite-difference gradients; exit 0 only within 1e-4")
    s.add_argument("--out")
    s.set_defaults(func=cmd_optimize)

    s = sub.add_parser("gen-leader", help="write a synthetic stop-and-go leader CSV")
    s.add_argument("--duration", type=float, default=600.0)
    s.add_argument("--v-high", dest="v_high", type=float, default=25.0)
    s.add_argument("--v-low", dest="v_low", type=float, default=5.0)
    s.add_argument("--decel", type=float, default=1.5)
    s.add_argument("--accel", type=float, default=1.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out")
    s.set_defaults(func=cmd_gen_leader)

    s = sub.add_parser("benchmark", help="simulator steps per second")
    s.add_argument("--vehicles", type=int, default=24)
    s.add_argument("--duration", type=float, default=120.0)
    s.add_argument("--planner", default="none")
    s.add_argument("--repeat", type=int, default=3)
    s.add_argument("--min-rate", dest="min_rate", type=float)
    s.set_defaults(func=cmd_benchmark)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ValueError, FileNotFoundError, KeyError, TypeError, yaml.YAMLError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
