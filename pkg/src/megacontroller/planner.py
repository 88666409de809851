"""Centralized speed planner.

Pipeline per update: latency-compensating prediction of the coarse segment
feed, fusion with recent vehicle pings (lane level), forward kernel
smoothing, bottleneck identification and buffer design. Plans are stored
in an in-process store and looked up by position and lane.
"""

from __future__ import annotations

import csv
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

OUT_OF_ORDER_TOLERANCE = 5.0  # s


@dataclass(frozen=True)
class SegmentEstimate:
    segment: int
    x_center: float  # m
    speed: float  # m/s
    measured_t: float  # s
    arrival_t: float | None = None  # s, filled by the store

    def __post_init__(self):
        if self.speed < 0:
            raise ValueError("segment speed must be >= 0")


@dataclass(frozen=True)
class VehiclePing:
    vehicle_id: str
    t: float
    x: float
    v: float
    lane: int = 0

    def __post_init__(self):
        if self.v < 0:
            raise ValueError("ping speed must be >= 0")


@dataclass(frozen=True)
class PlannerConfig:
    w: float = 1000.0  # smoothing window [m]
    kernel: str = "uniform"
    fine_length: float = 200.0  # [m]
    period: float = 60.0  # [s]
    latency: float = 180.0  # coarse feed arrival delay [s]
    ping_window: float = 60.0  # [s]
    w_back: float = -5.0  # congested wave speed [m/s]
    free_speed: float = 30.0  # corridor free speed [m/s]
    free_flow_fraction: float = 0.6  # persistence above this share of free speed
    bottleneck_fraction: float = 0.6
    persistence: int = 3  # updates a slow region must last
    buffer_length: float = 1000.0  # [m]
    v_max: float = 35.0  # plan speeds are clipped to [0, v_max]
    use_buffer: bool = True

    def __post_init__(self):
        if not self.w > 0:
            raise ValueError("smoothing window w must be positive")
        if not self.period > 0:
            raise ValueError("update period must be positive")
        if self.kernel not in KERNELS:
            raise ValueError(f"unknown kernel {self.kernel!r}; choose from {sorted(KERNELS)}")
        if not self.fine_length > 0 or self.persistence < 1 or self.buffer_length < 0:
            raise ValueError("invalid fine_length / persistence / buffer_length")


KERNELS = {
    "uniform": lambda u: np.ones_like(u),
    # weight falls linearly from the query position to the end of the window
    "triangular": lambda u: 1.0 - u,
}


# -- store ----------------------------------------------------------------------


@dataclass
class SpeedPlan:
    t: float
    centers: np.ndarray
    lanes: dict  # lane -> target speeds at centers
    inputs_arrival_max: float = -math.inf  # latest arrival time of any consumed input

    def lane_average(self) -> np.ndarray:
        return np.mean(np.vstack(list(self.lanes.values())), axis=0)

    def query(self, x, lane=0):
        """Piecewise-linear lookup, constant beyond the ends. Unknown lanes use the lane average."""
        values = self.lanes.get(lane)
        if values is None:
            values = self.lane_average()
        return np.interp(x, self.centers, values)


@dataclass
class PlannerStore:
    latency: float = 180.0
    pings: list = field(default_factory=list)
    estimates: list = field(default_factory=list)
    plans: list = field(default_factory=list)
    rejected: int = 0
    _ping_keys: set = field(default_factory=set)
    _last_ping_t: dict = field(default_factory=dict)
    _last_est_t: dict = field(default_factory=dict)

    def ingest_ping(self, ping: VehiclePing) -> bool:
        key = (ping.vehicle_id, ping.t)
        if key in self._ping_keys:
            return True
        last = self._last_ping_t.get(ping.vehicle_id, -math.inf)
        if ping.t < last - OUT_OF_ORDER_TOLERANCE:
            log.warning("rejecting out-of-order ping %s at t=%s (last %s)", ping.vehicle_id, ping.t, last)
            self.rejected += 1
            return False
        self._ping_keys.add(key)
        self._last_ping_t[ping.vehicle_id] = max(last, ping.t)
        self.pings.append(ping)
        return True

    def ingest_segment_estimate(self, est: SegmentEstimate) -> bool:
        last = self._last_est_t.get(est.segment, -math.inf)
        if est.measured_t < last - OUT_OF_ORDER_TOLERANCE:
            log.warning("rejecting out-of-order estimate for segment %s", est.segment)
            self.rejected += 1
            return False
        self._last_est_t[est.segment] = max(last, est.measured_t)
        arrival = est.measured_t + self.latency
        self.estimates.append(SegmentEstimate(est.segment, est.x_center, est.speed, est.measured_t, arrival))
        return True

    def pings_between(self, t0: float, t1: float) -> list:
        return [p for p in self.pings if t0 <= p.t <= t1]

    def estimates_arrived(self, t: float) -> list:
        return [e for e in self.estimates if e.arrival_t <= t]

    def publish_plan(self, plan: SpeedPlan):
        if self.plans and plan.t < self.plans[-1].t:
            raise ValueError("plans must be published in time order")
        self.plans.append(plan)

    def latest_plan(self, t: float) -> SpeedPlan | None:
        for plan in reversed(self.plans):
            if plan.t <= t:
                return plan
        return None


# -- prediction, fusion, smoothing ------------------------------------------------


def latest_update(history) -> tuple[float, np.ndarray, np.ndarray]:
    """Most recent complete update in ``history``: (measured_t, x_centers, speeds)."""
    if not history:
        raise ValueError("predict_tse needs at least one segment update")
    t_last = max(e.measured_t for e in history)
    rows = sorted((e.x_center, e.speed) for e in history if e.measured_t == t_last)
    xs, vs = np.array(rows, dtype=float).T
    return t_last, xs, vs


def predict_tse(history, now: float, x_query, cfg: PlannerConfig = PlannerConfig()) -> np.ndarray:
    """Speed field at ``now`` evaluated at ``x_query``.

    The newest update is shifted along the congested characteristic by
    ``w_back * (now - measured_t)``. Where both the shifted and the
    unshifted value are free flow, persistence is used instead.
    """
    t_meas, xs, vs = latest_update(history)
    x_query = np.asarray(x_query, dtype=float)
    age = now - t_meas
    advected = np.interp(x_query - cfg.w_back * age, xs, vs)
    persisted = np.interp(x_query, xs, vs)
    free = np.minimum(advected, persisted) >= cfg.free_flow_fraction * cfg.free_speed
    return np.where(free, persisted, advected)


def fine_centers(x_start: float, x_end: float, length: float) -> np.ndarray:
    n = max(1, int(math.ceil((x_end - x_start) / length - 1e-9)))
    return x_start + length * (np.arange(n) + 0.5)


def fuse(prediction, pings, centers, lanes, fine_length: float) -> dict:
    """Lane-level TSE: ping mean where a lane has pings in a segment, else the prediction."""
    prediction = np.asarray(prediction, dtype=float)
    edges0 = centers[0] - fine_length / 2.0
    sums = defaultdict(float)
    counts = defaultdict(int)
    for p in pings:
        j = int(math.floor((p.x - edges0) / fine_length))
        if 0 <= j < len(centers):
            sums[(p.lane, j)] += p.v
            counts[(p.lane, j)] += 1
    out = {}
    for lane in lanes:
        vals = prediction.copy()
        for (ln, j), n in counts.items():
            if ln == lane:
                vals[j] = sums[(ln, j)] / n
        out[lane] = vals
    return out


def _simpson(fun, a, b):
    m = 0.5 * (a + b)
    return (b - a) / 6.0 * (fun(a) + 4.0 * fun(m) + fun(b))


def kernel_smooth(centers, values, x_alpha: float, w: float, kernel: str = "uniform") -> float:
    """Kernel-weighted mean of the interpolated field over [x_alpha, x_alpha + w].

    The field is piecewise linear between centers and constant beyond them.
    Simpson's rule on each linear piece is exact for both shipped kernels.
    """
    if not w > 0:
        raise ValueError("window w must be positive")
    K = KERNELS[kernel]
    centers = np.asarray(centers, dtype=float)
    values = np.asarray(values, dtype=float)
    b = x_alpha + w
    inner = centers[(centers > x_alpha) & (centers < b)]
    nodes = np.concatenate(([x_alpha], inner, [b]))

    def weight(x):
        return K(np.asarray((x - x_alpha) / w))

    def weighted(x):
        return weight(x) * np.interp(x, centers, values)

    num = sum(_simpson(weighted, p, q) for p, q in zip(nodes[:-1], nodes[1:]))
    den = sum(_simpson(weight, p, q) for p, q in zip(nodes[:-1], nodes[1:]))
    return float(num / den)


def smooth_field(centers, values, cfg: PlannerConfig) -> np.ndarray:
    return np.array([kernel_smooth(centers, values, x, cfg.w, cfg.kernel) for x in centers])


# -- bottleneck and buffer --------------------------------------------------------


@dataclass(frozen=True)
class BottleneckRegion:
    start: int  # first segment index (upstream end)
    stop: int  # last segment index, inclusive
    speed: float  # mean smoothed speed over the region


@dataclass
class BottleneckTracker:
    """Slow-region detector with a persistence gate across updates."""

    cfg: PlannerConfig = field(default_factory=PlannerConfig)
    masks: list = field(default_factory=list)

    def update(self, smoothed) -> BottleneckRegion | None:
        smoothed = np.asarray(smoothed, dtype=float)
        threshold = self.cfg.bottleneck_fraction * self.cfg.free_speed
        mask = smoothed < threshold
        if self.masks and len(self.masks[-1]) != len(mask):
            self.masks.clear()
        self.masks.append(mask)
        self.masks = self.masks[-self.cfg.persistence:]
        if len(self.masks) < self.cfg.persistence:
            return None
        persistent = np.logical_and.reduce(self.masks)
        idx = np.flatnonzero(persistent)
        if idx.size == 0:
            return None
        stop = int(idx[-1])
        start = stop
        while start - 1 >= 0 and persistent[start - 1]:
            start -= 1
        return BottleneckRegion(start, stop, float(np.mean(smoothed[start:stop + 1])))


def identify_bottleneck(history_of_smoothed, cfg: PlannerConfig = PlannerConfig()):
    """Stateless form: feed a sequence of smoothed fields, newest last."""
    tracker = BottleneckTracker(cfg)
    region = None
    for field_ in history_of_smoothed:
        region = tracker.update(field_)
    return region


def design_buffer(centers, smoothed, region: BottleneckRegion | None, cfg: PlannerConfig) -> np.ndarray:
    """Linear speed ramp over ``buffer_length`` upstream of the bottleneck."""
    centers = np.asarray(centers, dtype=float)
    plan = np.asarray(smoothed, dtype=float).copy()
    if region is None or cfg.buffer_length <= 0:
        return plan
    x_b = centers[region.start] - cfg.fine_length / 2.0
    x_up = x_b - cfg.buffer_length
    v_b = region.speed
    v_up = float(np.interp(x_up, centers, smoothed))
    if v_up <= v_b:
        return plan
    inside = (centers >= x_up) & (centers < x_b)
    frac = (centers[inside] - x_up) / cfg.buffer_length
    plan[inside] = v_up + (v_b - v_up) * frac
    return plan


# -- planner loop -----------------------------------------------------------------


@dataclass
class SpeedPlanner:
    cfg: PlannerConfig
    x_start: float
    x_end: float
    lanes: tuple = (0,)
    tracker: BottleneckTracker = field(init=False)
    centers: np.ndarray = field(init=False)
    regions: list = field(default_factory=list)

    def __post_init__(self):
        self.tracker = BottleneckTracker(self.cfg)
        self.centers = fine_centers(self.x_start, self.x_end, self.cfg.fine_length)

    def update(self, store: PlannerStore, t: float) -> SpeedPlan:
        """Build and publish the plan for time ``t`` from data that has arrived by ``t``."""
        history = store.estimates_arrived(t)
        pings = store.pings_between(t - self.cfg.ping_window, t)
        pred = predict_tse(history, t, self.centers, self.cfg)
        lane_tse = fuse(pred, pings, self.centers, self.lanes, self.cfg.fine_length)
        smoothed = {ln: smooth_field(self.centers, v, self.cfg) for ln, v in lane_tse.items()}
        region = None
        if self.cfg.use_buffer:
            region = self.tracker.update(np.mean(np.vstack(list(smoothed.values())), axis=0))
        self.regions.append(region)
        lanes = {ln: np.clip(design_buffer(self.centers, v, region, self.cfg), 0.0, self.cfg.v_max)
                 for ln, v in smoothed.items()}
        arrivals = [e.arrival_t for e in history] + [p.t for p in pings]
        plan = SpeedPlan(t, self.centers.copy(), lanes, max(arrivals, default=-math.inf))
        store.publish_plan(plan)
        return plan


# -- CSV I/O ----------------------------------------------------------------------


def write_pings(path, pings):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["vehicle_id", "timestamp_s", "position_m", "speed_mps", "lane"])
        for p in pings:
            w.writerow([p.vehicle_id, repr(p.t), repr(p.x), repr(p.v), p.lane])


def read_pings(path) -> list:
    with open(path, newline="") as fh:
        return [VehiclePing(r["vehicle_id"], float(r["timestamp_s"]), float(r["position_m"]),
                            float(r["speed_mps"]), int(r["lane"])) for r in csv.DictReader(fh)]


def write_estimates(path, estimates):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["segment_id", "x_center_m", "speed_mps", "measured_t_s"])
        for e in estimates:
            w.writerow([e.segment, repr(e.x_center), repr(e.speed), repr(e.measured_t)])


def read_estimates(path) -> list:
    with open(path, newline="") as fh:
        return [SegmentEstimate(int(r["segment_id"]), float(r["x_center_m"]), float(r["speed_mps"]),
                                float(r["measured_t_s"])) for r in csv.DictReader(fh)]


def write_plans(path, plans):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t_s", "lane", "x_center_m", "target_mps"])
        for plan in plans:
            for lane, values in plan.lanes.items():
                for x, v in zip(plan.centers, values):
                    w.writerow([repr(float(plan.t)), lane, repr(float(x)), repr(float(v))])


def read_plans(path) -> list:
    rows = defaultdict(lambda: defaultdict(list))
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            rows[float(r["t_s"])][int(r["lane"])].append((float(r["x_center_m"]), float(r["target_mps"])))
    plans = []
    for t in sorted(rows):
        lanes = {}
        centers = None
        for lane, pts in rows[t].items():
            xs, vs = np.array(pts).T
            centers = xs
            lanes[lane] = vs
        plans.append(SpeedPlan(t, centers, lanes))
    return plans


def replay(store_path: Path | str, cfg: PlannerConfig, x_start: float, x_end: float,
           t_end: float, t_start: float = 0.0) -> PlannerStore:
    """Rebuild plans from a directory holding pings.csv and estimates.csv."""
    store_path = Path(store_path)
    store = PlannerStore(latency=cfg.latency)
    for e in sorted(read_estimates(store_path / "estimates.csv"), key=lambda e: e.measured_t):
        store.ingest_segment_estimate(e)
    for p in sorted(read_pings(store_path / "pings.csv"), key=lambda p: p.t):
        store.ingest_ping(p)
    planner = SpeedPlanner(cfg, x_start, x_end)
    n = int(math.floor((t_end - t_start) / cfg.period + 1e-9))
    for i in range(n + 1):
        planner.update(store, t_start + i * cfg.period)
    return store
