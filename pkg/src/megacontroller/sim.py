"""Single-lane platoon simulator and closed loop with the speed planner.

Vehicle 0 replays a leader speed trace; the rest are automated vehicles
(acceleration-based or ACC-based controllers) and IDM followers. All
vehicles are updated together from the previous tick's states (explicit
scheme) with a ballistic position update.
"""

from __future__ import annotations

import csv
import heapq
import math
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml

from .acc_controller import AccController, MPH
from .accel_controller import AccelController, BaseControllerConfig, LocalObservation
from .cfm import CollisionError, IdmParams, idm_equilibrium_gap
from .leader import (LeaderTrajectory, WaveField, constant_speed, load_leader_trajectory, speed_pulse,
                     stop_and_go)
from .planner import PlannerConfig, PlannerStore, SegmentEstimate, SpeedPlanner, VehiclePing, write_plans

VEHICLE_LENGTH = 5.0  # m
SEGMENT_LENGTH = 804.672  # coarse feed segment, 0.5 mi
AV_CONTROLLERS = ("accel", "accel-nolc", "acc")
PLANNER_VARIANTS = ("none", "tse", "full")
SCENARIO_KINDS = ("shockwave", "freeflow", "bottleneck")
FREEFLOW_SPEED = 60 * MPH  # an integer mph so ACC settings hit it exactly


class SimulationCollision(CollisionError):
    """A gap reached zero. ``result`` holds the run up to the collision."""

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


@dataclass(frozen=True)
class BottleneckConfig:
    x_start: float
    x_end: float
    kappa: float = 0.15  # flow scale [veh/s]: limit = kappa / density
    v_free: float = 30.0
    decel: float = 3.0  # braking used to comply with the limit [m/s^2]
    observed_speed: float = 10.0  # speed the coarse feed reports inside the region

    def __post_init__(self):
        if not self.x_end > self.x_start:
            raise ValueError("bottleneck region needs x_end > x_start")
        if not self.kappa > 0:
            raise ValueError("kappa must be positive")


def bottleneck_speed_limit(density: float, cfg: BottleneckConfig) -> float:
    """min(v_free, kappa / density); free speed for an empty region."""
    if density < 0:
        raise ValueError("density must be >= 0")
    if density == 0:
        return cfg.v_free
    return min(cfg.v_free, cfg.kappa / density)


@dataclass(frozen=True)
class CutEvent:
    t: float
    target: str  # vehicle id whose leader changes
    kind: str = "in"  # "in" or "out"
    gap: float = 65.0  # cut-in gap ahead of the target [m]
    speed: float | None = None  # cut-in vehicle speed, default = target speed
    desired_speed: float | None = None  # IDM v0 of the inserted vehicle, default = its speed

    def __post_init__(self):
        if self.kind not in ("in", "out"):
            raise ValueError(f"cut event kind must be 'in' or 'out', got {self.kind!r}")


@dataclass
class Scenario:
    name: str = "shockwave"
    kind: str = "shockwave"
    duration: float = 600.0
    dt: float = 0.1
    layout: tuple = ("av",) + ("human",) * 20  # vehicles behind the leader, front to back
    av_controller: str = "accel"
    leader: dict = field(default_factory=lambda: {"type": "stop_and_go", "v_high": 25.0, "v_low": 5.0})
    init_speed: float | None = None  # default: leader speed at t=0
    idm: IdmParams = field(default_factory=IdmParams)
    bottleneck: BottleneckConfig | None = None
    cut_events: tuple = ()
    seed: int = 0

    def __post_init__(self):
        if self.kind not in SCENARIO_KINDS:
            raise ValueError(f"unknown scenario kind {self.kind!r}")
        if self.av_controller not in AV_CONTROLLERS:
            raise ValueError(f"unknown AV controller {self.av_controller!r}; choose from {AV_CONTROLLERS}")
        ratio = 0.1 / self.dt
        if not self.dt > 0 or abs(ratio - round(ratio)) > 1e-9:
            raise ValueError("dt must divide the 0.1 s sampling period")
        if not self.duration > 0:
            raise ValueError("duration must be positive")
        bad = [k for k in self.layout if k not in ("av", "human")]
        if bad:
            raise ValueError(f"layout entries must be 'av' or 'human', got {bad}")
        self.layout = tuple(self.layout)
        self.cut_events = tuple(self.cut_events)

    @property
    def n_ticks(self) -> int:
        return int(round(self.duration / self.dt))

    def leader_trajectory(self) -> LeaderTrajectory:
        spec = dict(self.leader)
        kind = spec.pop("type")
        if kind == "stop_and_go":
            return stop_and_go(duration=self.duration, seed=self.seed, **spec)
        if kind == "constant":
            return constant_speed(self.duration, spec["v"])
        if kind == "pulse":
            return speed_pulse(self.duration, **spec)
        if kind == "csv":
            return load_leader_trajectory(spec["path"])
        raise ValueError(f"unknown leader type {kind!r}")


def scenario_to_dict(sc: Scenario) -> dict:
    d = asdict(sc)
    d["layout"] = list(sc.layout)
    d["cut_events"] = [asdict(e) for e in sc.cut_events]
    return d


def scenario_from_dict(d: dict) -> Scenario:
    d = dict(d)
    if "idm" in d and isinstance(d["idm"], dict):
        d["idm"] = IdmParams(**d["idm"])
    if d.get("bottleneck") is not None and isinstance(d["bottleneck"], dict):
        d["bottleneck"] = BottleneckConfig(**d["bottleneck"])
    d["cut_events"] = tuple(CutEvent(**e) if isinstance(e, dict) else e for e in d.get("cut_events", ()))
    if "layout" in d:
        d["layout"] = tuple(d["layout"])
    unknown = set(d) - set(Scenario.__dataclass_fields__)
    if unknown:
        raise ValueError(f"unknown scenario keys {sorted(unknown)}")
    return Scenario(**d)


def load_scenario(path) -> Scenario:
    return scenario_from_dict(yaml.safe_load(Path(path).read_text()))


def layout(n_av: int, n_human: int, pattern: str = "front") -> tuple:
    """Platoon layout behind the leader: AVs first, or spread evenly ("interleaved")."""
    if n_av < 0 or n_human < 0:
        raise ValueError("vehicle counts must be >= 0")
    n = n_av + n_human
    if pattern == "front":
        return ("av",) * n_av + ("human",) * n_human
    if pattern == "interleaved":
        slots = {int(math.floor(i * n / n_av)) for i in range(n_av)} if n_av else set()
        return tuple("av" if i in slots else "human" for i in range(n))
    raise ValueError(f"unknown layout pattern {pattern!r}")


def preset(kind: str, n_av: int = 1, n_human: int | None = None, av_controller: str = "accel",
           seed: int = 0, pattern: str = "front", duration: float | None = None) -> Scenario:
    """Built-in scenarios: stop-and-go leader, constant 60 mph leader, or a bottleneck.

    The bottleneck platoon is longer by default so a queue is still
    discharging in the final part of the run.
    """
    if n_human is None:
        n_human = 60 if kind == "bottleneck" else 20
    lay = layout(n_av, n_human, pattern)
    if kind == "shockwave":
        return Scenario("shockwave", "shockwave", duration or 600.0, layout=lay,
                        av_controller=av_controller, seed=seed)
    if kind == "freeflow":
        return Scenario("freeflow", "freeflow", duration or 600.0, layout=lay, av_controller=av_controller,
                        leader={"type": "constant", "v": FREEFLOW_SPEED}, seed=seed)
    if kind == "bottleneck":
        bn = BottleneckConfig(x_start=3000.0, x_end=3500.0, kappa=0.1)
        return Scenario("bottleneck", "bottleneck", duration or 600.0, layout=lay,
                        av_controller=av_controller, leader={"type": "constant", "v": 25.0},
                        bottleneck=bn, seed=seed)
    raise ValueError(f"unknown scenario kind {kind!r}")


def baseline_scenario(sc: Scenario) -> Scenario:
    """The same scenario with every AV replaced by a human driver."""
    return replace(sc, layout=("human",) * len(sc.layout))


# -- agents -----------------------------------------------------------------------


class AccelAgent:
    kind = "accel"

    def __init__(self, lc: bool = True, dt: float = 0.1):
        self.ctrl = AccelController(dt=dt) if lc else AccelController(lc=None, dt=dt)
        self.trace = []

    def min_gap(self, v: float) -> float:
        """Smallest gap at which the safety term allows holding speed v."""
        c = self.ctrl.cfg
        return c.s0 + v * v * (1.0 / (2 * abs(c.a_min)) - 1.0 / (2 * abs(c.a_l_min))) + 1.0

    def accel(self, tick, v, v_lead, a_lead, gap, v_target):
        minicar = gap is not None and gap <= self.ctrl.cfg.sensor_range
        obs = LocalObservation(v=v, v_lead=v_lead if minicar else 0.0, a_lead=a_lead if minicar else 0.0,
                               h=gap if minicar else math.inf, v_target=v_target, minicar=minicar)
        u = self.ctrl(obs)
        c = self.ctrl.last
        self.trace.append((tick, c["a_safe"], c["a_target"], c["a_mpc"], c["a_cmd"], u, c["v_target"],
                           int(c["lc_active"])))
        return u

    trace_header = ("tick", "a_safe", "a_target", "a_mpc", "a_cmd", "u", "v_target", "lc_active")


class AccAgent:
    kind = "acc"

    def __init__(self, dt: float = 0.1):
        self.ctrl = AccController(dt=dt)
        self.trace = []

    def min_gap(self, v: float) -> float:
        return 0.0

    def accel(self, tick, v, v_lead, a_lead, gap, v_target):
        minicar = gap is not None and gap <= self.ctrl.plant.gap_mode_range
        u = self.ctrl(v, v_lead, gap, v_target, minicar)
        c = self.ctrl.last
        self.trace.append((tick, c["speed_setting"], c["gap_setting"], u, v_target))
        return u

    trace_header = ("tick", "speed_setting", "gap_setting", "u", "v_target")


def make_agent(name: str, dt: float):
    if name == "accel":
        return AccelAgent(lc=True, dt=dt)
    if name == "accel-nolc":
        return AccelAgent(lc=False, dt=dt)
    if name == "acc":
        return AccAgent(dt=dt)
    raise ValueError(f"unknown AV controller {name!r}")


# -- results ----------------------------------------------------------------------


@dataclass
class Trajectories:
    dt: float
    ids: list
    kinds: dict
    t: dict
    x: dict
    v: dict
    a: dict
    engaged: dict

    def total_distance(self) -> float:
        return float(sum(x[-1] - x[0] for x in self.x.values()))

    def total_time(self) -> float:
        return float(sum(t[-1] - t[0] for t in self.t.values()))

    def av_ids(self) -> list:
        return [i for i in self.ids if self.kinds[i] == "av"]

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["vehicle_id", "t", "x", "v", "a", "engaged"])
            for vid in self.ids:
                t, x, v, a, e = self.t[vid], self.x[vid], self.v[vid], self.a[vid], self.engaged[vid]
                for k in range(t.size):
                    w.writerow([vid, repr(float(t[k])), repr(float(x[k])), repr(float(v[k])),
                                repr(float(a[k])), int(e[k])])

    @classmethod
    def read_csv(cls, path, kinds: dict | None = None, dt: float = 0.1) -> "Trajectories":
        cols = {}
        order = []
        with open(path, newline="") as fh:
            for r in csv.DictReader(fh):
                vid = r["vehicle_id"]
                if vid not in cols:
                    cols[vid] = ([], [], [], [], [])
                    order.append(vid)
                c = cols[vid]
                c[0].append(float(r["t"]))
                c[1].append(float(r["x"]))
                c[2].append(float(r["v"]))
                c[3].append(float(r["a"]))
                c[4].append(bool(int(r.get("engaged", 0) or 0)))
        kinds = kinds or {vid: _kind_from_id(vid) for vid in order}
        arr = {k: {vid: np.array(cols[vid][k]) for vid in order} for k in range(5)}
        return cls(dt, order, kinds, arr[0], arr[1], arr[2], arr[3], arr[4])


def _kind_from_id(vid: str) -> str:
    if vid == "leader":
        return "leader"
    return "av" if vid.startswith("av") else "human"


@dataclass
class RunResult:
    scenario: Scenario
    planner: str
    trajectories: Trajectories
    plans: list = field(default_factory=list)
    events: list = field(default_factory=list)  # (t, kind, detail)
    traces: dict = field(default_factory=dict)  # vehicle id -> (header, rows)
    plan_use: dict = field(default_factory=dict)  # plan time -> first tick time it was used
    corridor: tuple = (0.0, 0.0)
    wall_time: float = 0.0

    def write(self, outdir):
        outdir = Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        self.trajectories.write_csv(outdir / "trajectories.csv")
        write_plans(outdir / "plans.csv", self.plans)
        with open(outdir / "events.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t_s", "event", "detail"])
            for t, kind, detail in self.events:
                w.writerow([repr(float(t)), kind, detail])
        tdir = outdir / "traces"
        tdir.mkdir(exist_ok=True)
        for vid, (header, rows) in self.traces.items():
            with open(tdir / f"{vid}.csv", "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(header)
                for row in rows:
                    w.writerow(["" if c is None else repr(c) if isinstance(c, float) else c for c in row])
        meta = {"scenario": scenario_to_dict(self.scenario), "planner": self.planner,
                "kinds": self.trajectories.kinds, "dt": self.trajectories.dt,
                "corridor": [float(c) for c in self.corridor]}
        (outdir / "run.yaml").write_text(yaml.safe_dump(meta, sort_keys=True))


def load_run(outdir) -> tuple[Trajectories, dict]:
    outdir = Path(outdir)
    if not (outdir / "trajectories.csv").exists():
        raise FileNotFoundError(f"no run artifact in {outdir}")
    meta = yaml.safe_load((outdir / "run.yaml").read_text()) if (outdir / "run.yaml").exists() else {}
    traj = Trajectories.read_csv(outdir / "trajectories.csv", meta.get("kinds"), meta.get("dt", 0.1))
    return traj, meta


# -- engine -----------------------------------------------------------------------


class Simulation:
    """Explicit platoon integrator. ``target_speed(vid, x, tick)`` supplies planner targets."""

    def __init__(self, scenario: Scenario, target_speed=None):
        self.sc = scenario
        self.dt = scenario.dt
        self.leader = scenario.leader_trajectory()
        if self.leader.duration + 1e-9 < scenario.duration:
            raise ValueError("leader trajectory shorter than the scenario duration")
        self.target_speed = target_speed or (lambda vid, x, tick: None)
        v0 = scenario.init_speed if scenario.init_speed is not None else float(self.leader.v[0])
        ids = ["leader"]
        kinds = {"leader": "leader"}
        n_av = n_h = 0
        for k in scenario.layout:
            if k == "av":
                n_av += 1
                vid = f"av{n_av:02d}"
            else:
                n_h += 1
                vid = f"hv{n_h:02d}"
            ids.append(vid)
            kinds[vid] = k
        self.ids = ids
        self.kinds = kinds
        self.agents = {vid: make_agent(scenario.av_controller, self.dt) for vid in ids if kinds[vid] == "av"}
        p = scenario.idm
        self.idm = {vid: p for vid in ids if kinds[vid] == "human"}
        x = [0.0]
        for vid in ids[1:]:
            gap = idm_equilibrium_gap(v0, p)
            if vid in self.agents:
                gap = max(gap, self.agents[vid].min_gap(v0))
            x.append(x[-1] - VEHICLE_LENGTH - gap)
        self.x = np.array(x)
        self.v = np.full(len(ids), v0)
        self.v[0] = self.leader.speed_at(0.0)
        self.a = np.zeros(len(ids))
        self.tick = 0
        self.events = []
        self._cuts = sorted(scenario.cut_events, key=lambda e: e.t)
        self._n_cut = 0
        self._rebuild_index()
        self._log_ids = []
        self._log = []  # (ids tuple, t, x, v, a, engaged)
        self._engaged = np.zeros(len(ids), dtype=bool)

    def _rebuild_index(self):
        self._ids_t = tuple(self.ids)
        self._human = np.array([i for i, vid in enumerate(self.ids) if self.kinds[vid] == "human"], dtype=int)
        hp = [self.idm[self.ids[i]] for i in self._human]
        self._p = {name: np.array([getattr(q, name) for q in hp]) for name in ("v0", "T", "s0", "delta", "a", "b")}
        self._av = [(i, vid, self.agents[vid]) for i, vid in enumerate(self.ids) if vid in self.agents]

    # cut-in / cut-out
    def apply_cut_event(self, ev: CutEvent):
        if ev.target not in self.ids:
            raise ValueError(f"cut event targets unknown vehicle {ev.target!r}")
        j = self.ids.index(ev.target)
        if j == 0:
            raise ValueError("cannot cut in front of the leader")
        if ev.kind == "in":
            if ev.gap <= self.sc.idm.s0:
                raise ValueError(f"cut-in gap {ev.gap} m is not above s0 = {self.sc.idm.s0} m")
            x_new = self.x[j] + ev.gap + VEHICLE_LENGTH
            if x_new + VEHICLE_LENGTH >= self.x[j - 1]:
                raise ValueError("cut-in vehicle does not fit in front of the target")
            speed = self.v[j] if ev.speed is None else ev.speed
            self._n_cut += 1
            vid = f"cut{self._n_cut:02d}"
            desired = ev.desired_speed if ev.desired_speed is not None else max(speed, 0.1)
            self.idm[vid] = replace(self.sc.idm, v0=desired)
            self.kinds[vid] = "human"
            self.ids.insert(j, vid)
            self.x = np.insert(self.x, j, x_new)
            self.v = np.insert(self.v, j, speed)
            self.a = np.insert(self.a, j, 0.0)
            self._engaged = np.insert(self._engaged, j, False)
            self.events.append((self.tick * self.dt, "cut_in", f"{vid} ahead of {ev.target} gap={ev.gap!r}"))
        else:
            vid = self.ids[j - 1]
            if vid == "leader":
                raise ValueError("the leader cannot cut out")
            del self.ids[j - 1]
            self.x = np.delete(self.x, j - 1)
            self.v = np.delete(self.v, j - 1)
            self.a = np.delete(self.a, j - 1)
            self._engaged = np.delete(self._engaged, j - 1)
            self.events.append((self.tick * self.dt, "cut_out", f"{vid} ahead of {ev.target}"))
        self._rebuild_index()

    def gaps(self) -> np.ndarray:
        return self.x[:-1] - self.x[1:] - VEHICLE_LENGTH

    def _accelerations(self, t: float) -> np.ndarray:
        x, v = self.x, self.v
        gaps = x[:-1] - x[1:] - VEHICLE_LENGTH
        a = np.empty_like(v)
        a[0] = (self.leader.speed_at(t + self.dt) - v[0]) / self.dt
        h = self._human
        if h.size:
            p = self._p
            s = gaps[h - 1]
            vh = v[h]
            dv = vh - v[h - 1]
            s_star = p["s0"] + vh * p["T"] + np.maximum(0.0, vh * dv) / (2.0 * np.sqrt(p["a"] * p["b"]))
            a[h] = p["a"] * (1.0 - (vh / p["v0"]) ** p["delta"] - (s_star / s) ** 2)
        # AVs run front to back, so a[i - 1] already holds the predecessor's command for this tick
        for i, vid, agent in self._av:
            target = self.target_speed(vid, float(x[i]), self.tick)
            self._engaged[i] = target is not None or self.target_speed is _NO_PLAN
            a[i] = agent.accel(self.tick, float(v[i]), float(v[i - 1]), float(a[i - 1]),
                               float(gaps[i - 1]), target)
        bn = self.sc.bottleneck
        if bn is not None:
            inside = (x >= bn.x_start) & (x < bn.x_end)
            inside[0] = False
            if inside.any():
                n_in = int(np.count_nonzero((x >= bn.x_start) & (x < bn.x_end)))
                limit = bottleneck_speed_limit(n_in / (bn.x_end - bn.x_start), bn)
                cap = np.maximum((limit - v) / self.dt, -bn.decel)
                a = np.where(inside, np.minimum(a, cap), a)
        return a

    def step(self):
        """Advance one tick."""
        t = self.tick * self.dt
        while self._cuts and self._cuts[0].t <= t + 1e-9:
            self.apply_cut_event(self._cuts.pop(0))
        a = self._accelerations(t)
        v, dt = self.v, self.dt
        v_new = v + a * dt
        x_new = self.x + v * dt + 0.5 * a * dt * dt
        stopped = v_new < 0
        if stopped.any():
            # vehicle halts inside the tick; travel only up to the stop
            x_new[stopped] = self.x[stopped] + v[stopped] ** 2 / (2.0 * -a[stopped])
            v_new[stopped] = 0.0
            a = a.copy()
            a[stopped] = -v[stopped] / dt
        v_new[0] = self.leader.speed_at(t + dt)
        x_new[0] = self.x[0] + 0.5 * (v[0] + v_new[0]) * dt
        self._record(t, a)
        self.x, self.v, self.a = x_new, v_new, a
        self.tick += 1
        gaps = self.gaps()
        if np.any(gaps <= 0):
            i = int(np.argmax(gaps <= 0))
            raise CollisionError(f"collision at t={self.tick * dt:.1f} s: {self.ids[i + 1]} hit "
                                 f"{self.ids[i]} (gap {gaps[i]:.3f} m)")

    def _record(self, t, a):
        self._log.append((self._ids_t, t, self.x, self.v, a, self._engaged.copy()))

    def finish(self) -> Trajectories:
        """Close the log with the current state and assemble per-vehicle arrays."""
        self._log.append((self._ids_t, self.tick * self.dt, self.x, self.v, np.zeros_like(self.v),
                          self._engaged.copy()))
        cols = {}
        order = []
        run_start = 0
        log = self._log
        for k in range(1, len(log) + 1):
            if k < len(log) and log[k][0] is log[run_start][0]:
                continue
            ids = log[run_start][0]
            chunk = log[run_start:k]
            t = np.array([c[1] for c in chunk])
            X = np.vstack([c[2] for c in chunk])
            V = np.vstack([c[3] for c in chunk])
            A = np.vstack([c[4] for c in chunk])
            E = np.vstack([c[5] for c in chunk])
            for j, vid in enumerate(ids):
                if vid not in cols:
                    cols[vid] = [[], [], [], [], []]
                    order.append(vid)
                for lst, arr in zip(cols[vid], (t, X[:, j], V[:, j], A[:, j], E[:, j])):
                    lst.append(arr)
            run_start = k
        out = {name: {} for name in ("t", "x", "v", "a", "e")}
        for vid in order:
            for name, parts in zip(("t", "x", "v", "a", "e"), cols[vid]):
                out[name][vid] = np.concatenate(parts)
        return Trajectories(self.dt, order, dict(self.kinds), out["t"], out["x"], out["v"], out["a"], out["e"])

    def traces(self) -> dict:
        return {vid: (ag.trace_header, ag.trace) for vid, ag in self.agents.items()}


def _no_plan(vid, x, tick):
    return None


_NO_PLAN = _no_plan


def run_open_loop(scenario: Scenario) -> RunResult:
    """Run without the planner; AVs use their fallback targets."""
    sim = Simulation(scenario, _NO_PLAN)
    t0 = time.perf_counter()
    try:
        for _ in range(scenario.n_ticks):
            sim.step()
    except CollisionError as exc:
        res = RunResult(scenario, "none", sim.finish(), events=sim.events + [(sim.tick * sim.dt, "collision", str(exc))],
                        traces=sim.traces())
        raise SimulationCollision(str(exc), res) from exc
    return RunResult(scenario, "none", sim.finish(), events=sim.events, traces=sim.traces(),
                     wall_time=time.perf_counter() - t0)


# -- closed loop --------------------------------------------------------------------


def _background(scenario: Scenario, leader: LeaderTrajectory, w_back: float):
    field_ = WaveField(leader, 0.0, w_back)
    bn = scenario.bottleneck

    def speed(x, t):
        v = field_.speed(x, t)
        if bn is not None:
            inside = (np.asarray(x) >= bn.x_start) & (np.asarray(x) < bn.x_end)
            v = np.where(inside, np.minimum(v, bn.observed_speed), v)
        return v

    return speed


def planner_config_for(scenario: Scenario, variant: str, base: PlannerConfig | None = None) -> PlannerConfig:
    base = base or PlannerConfig()
    leader = scenario.leader_trajectory()
    free = max(float(np.max(leader.v)), base.free_speed if scenario.kind == "bottleneck" else 0.0)
    return replace(base, free_speed=free, use_buffer=(variant == "full"))


def closed_loop_run(scenario: Scenario, planner: str = "full", planner_cfg: PlannerConfig | None = None,
                    ping_period: float = 1.0) -> RunResult:
    """Co-simulate the platoon with the speed planner on a discrete event schedule.

    Per tick, due events run first (feed ingestion, pings, plan publication),
    then vehicles step using the newest plan published at or before that tick.
    """
    if planner not in PLANNER_VARIANTS:
        raise ValueError(f"unknown planner variant {planner!r}; choose from {PLANNER_VARIANTS}")
    if planner == "none":
        return run_open_loop(scenario)
    cfg = planner_config_for(scenario, planner, planner_cfg)
    dt = scenario.dt
    leader = scenario.leader_trajectory()
    x_lead_end = float(leader.positions()[-1])
    probe = Simulation(scenario)
    corridor = (float(probe.x[-1]) - 1000.0, x_lead_end + 3000.0)
    background = _background(scenario, leader, cfg.w_back)
    store = PlannerStore(latency=cfg.latency)
    sp = SpeedPlanner(cfg, *corridor)
    seg_lo = corridor[0] - 2 * SEGMENT_LENGTH
    n_seg = int(math.ceil((corridor[1] + 2000.0 - seg_lo) / SEGMENT_LENGTH))
    seg_centers = seg_lo + SEGMENT_LENGTH * (np.arange(n_seg) + 0.5)
    sub = np.linspace(-0.5, 0.5, 9) * SEGMENT_LENGTH
    state = {"plan": None}
    plan_use = {}

    def target(vid, x, tick):
        plan = state["plan"]
        if plan is None:
            return None
        plan_use.setdefault(plan.t, tick * dt)
        return float(plan.query(x, 0))

    sim = Simulation(scenario, target)
    events = sim.events

    def measure(t_m):
        speeds = np.mean(background(seg_centers[:, None] + sub[None, :], t_m), axis=1)
        for j, (xc, v) in enumerate(zip(seg_centers, speeds)):
            store.ingest_segment_estimate(SegmentEstimate(j, float(xc), float(v), t_m))
        events.append((t_m, "estimate", f"segments={n_seg} arrival={t_m + cfg.latency!r}"))

    period_ticks = int(round(cfg.period / dt))
    ping_ticks = max(1, int(round(ping_period / dt)))
    n_pre = int(math.ceil(cfg.latency / cfg.period))
    for m in range(-n_pre, 0):
        measure(m * cfg.period)

    heap = []
    seq = 0

    def push(tick, prio, kind):
        nonlocal seq
        heapq.heappush(heap, (tick, prio, seq, kind))
        seq += 1

    for k in range(0, scenario.n_ticks + 1, period_ticks):
        push(k, 0, "estimate")
        push(k, 2, "plan")
    for k in range(0, scenario.n_ticks + 1, ping_ticks):
        push(k, 1, "ping")

    t0 = time.perf_counter()
    try:
        for k in range(scenario.n_ticks):
            while heap and heap[0][0] <= k:
                _, _, _, kind = heapq.heappop(heap)
                t = k * dt
                if kind == "estimate":
                    measure(t)
                elif kind == "ping":
                    for i, vid in enumerate(sim.ids):
                        if sim.kinds[vid] == "av":
                            store.ingest_ping(VehiclePing(vid, t, float(sim.x[i]), float(sim.v[i]), 0))
                else:
                    plan = sp.update(store, t)
                    state["plan"] = plan
                    region = sp.regions[-1]
                    events.append((t, "plan", f"inputs_arrival_max={plan.inputs_arrival_max!r} "
                                              f"bottleneck={None if region is None else (region.start, region.stop)}"))
            sim.step()
    except CollisionError as exc:
        res = RunResult(scenario, planner, sim.finish(), store.plans,
                        events + [(sim.tick * dt, "collision", str(exc))], sim.traces(), plan_use, corridor)
        raise SimulationCollision(str(exc), res) from exc
    return RunResult(scenario, planner, sim.finish(), store.plans, events, sim.traces(), plan_use, corridor,
                     time.perf_counter() - t0)


def benchmark(n_vehicles: int = 24, duration: float = 120.0, planner: str = "none") -> float:
    """Simulator steps per second for a shockwave platoon of ``n_vehicles`` (leader included)."""
    sc = preset("shockwave", n_av=1, n_human=n_vehicles - 2, duration=duration)
    t0 = time.perf_counter()
    closed_loop_run(sc, planner)
    return sc.n_ticks / (time.perf_counter() - t0)
