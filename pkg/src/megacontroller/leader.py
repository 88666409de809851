"""Leader speed traces: validation, CSV round trip, synthetic stop-and-go generator."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

SAMPLE_DT = 0.1  # s, 10 Hz
CADENCE_TOL = 1e-6
MAX_GAP = 0.2  # s


@dataclass
class LeaderTrajectory:
    t: np.ndarray
    v: np.ndarray
    grade: np.ndarray | None = None

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.v = np.asarray(self.v, dtype=float)
        if self.grade is not None:
            self.grade = np.asarray(self.grade, dtype=float)
        validate(self)

    @property
    def duration(self) -> float:
        return float(self.t[-1] - self.t[0])

    def speed_at(self, t):
        return np.interp(t, self.t, self.v)

    def positions(self, x0: float = 0.0) -> np.ndarray:
        """Position at each sample, integrating speed with the trapezoid rule."""
        inc = 0.5 * (self.v[1:] + self.v[:-1]) * np.diff(self.t)
        return x0 + np.concatenate(([0.0], np.cumsum(inc)))


def validate(traj: LeaderTrajectory):
    t, v = traj.t, traj.v
    if t.ndim != 1 or t.shape != v.shape or t.size < 2:
        raise ValueError("leader trajectory needs matching 1-D t and v with at least two samples")
    if traj.grade is not None and traj.grade.shape != t.shape:
        raise ValueError("grade profile length does not match the samples")
    if np.any(v < 0):
        raise ValueError(f"negative leader speed at t={t[np.argmax(v < 0)]}")
    steps = np.diff(t)
    if np.any(steps <= 0):
        raise ValueError("leader timestamps must be strictly increasing")
    if np.any(steps > MAX_GAP):
        k = int(np.argmax(steps > MAX_GAP))
        raise ValueError(f"gap of {steps[k]:.3f} s in leader trajectory at t={t[k]}")
    bad = np.abs(steps - SAMPLE_DT) > CADENCE_TOL
    if np.any(bad):
        k = int(np.argmax(bad))
        raise ValueError(f"leader samples must be 10 Hz; step {steps[k]!r} at t={t[k]}")


def save_leader(path, traj: LeaderTrajectory):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t_s", "v_mps"] + (["grade"] if traj.grade is not None else []))
        for k in range(traj.t.size):
            row = [repr(float(traj.t[k])), repr(float(traj.v[k]))]
            if traj.grade is not None:
                row.append(repr(float(traj.grade[k])))
            w.writerow(row)


def load_leader_trajectory(path) -> LeaderTrajectory:
    with open(Path(path), newline="") as fh:
        reader = csv.DictReader(fh)
        rows = list(reader)
        cols = reader.fieldnames or []
    if "t_s" not in cols or "v_mps" not in cols:
        raise ValueError(f"{path}: expected columns t_s,v_mps[,grade]")
    t = [float(r["t_s"]) for r in rows]
    v = [float(r["v_mps"]) for r in rows]
    grade = [float(r["grade"]) for r in rows] if "grade" in cols else None
    return LeaderTrajectory(np.array(t), np.array(v), None if grade is None else np.array(grade))


def _cosine_ramp(v_from: float, v_to: float, peak_accel: float) -> np.ndarray:
    """Speed samples of a half-cosine transition with the given peak |accel|."""
    dv = abs(v_to - v_from)
    if dv == 0:
        return np.empty(0)
    duration = math.pi * dv / (2.0 * peak_accel)
    n = max(1, int(math.ceil(duration / SAMPLE_DT)))
    s = np.arange(1, n + 1) / n
    return v_from + (v_to - v_from) * 0.5 * (1.0 - np.cos(np.pi * s))


def stop_and_go(duration: float = 600.0, v_high: float = 30.0, v_low: float = 5.0,
                seed: int = 0, decel: float = 1.5, accel: float = 1.0,
                cruise: tuple = (20.0, 60.0), hold: tuple = (5.0, 20.0),
                lead_in: float = 10.0) -> LeaderTrajectory:
    """Synthetic stop-and-go speed trace cycling v_high -> v_low -> v_high.

    Cruise and hold durations are drawn uniformly from the given ranges;
    speed transitions are half-cosine ramps with the given peak rates.
    """
    if not 0 <= v_low < v_high:
        raise ValueError("need 0 <= v_low < v_high")
    rng = np.random.default_rng(seed)
    n_total = int(round(duration / SAMPLE_DT)) + 1
    pieces = [np.full(int(round(lead_in / SAMPLE_DT)) + 1, v_high)]
    n = pieces[0].size
    while n < n_total:
        seg = [
            _cosine_ramp(v_high, v_low, decel),
            np.full(int(round(rng.uniform(*hold) / SAMPLE_DT)), v_low),
            _cosine_ramp(v_low, v_high, accel),
            np.full(int(round(rng.uniform(*cruise) / SAMPLE_DT)), v_high),
        ]
        for p in seg:
            pieces.append(p)
            n += p.size
    v = np.concatenate(pieces)[:n_total]
    t = np.round(np.arange(n_total) * SAMPLE_DT, 10)
    return LeaderTrajectory(t, v)


def constant_speed(duration: float, v: float) -> LeaderTrajectory:
    n = int(round(duration / SAMPLE_DT)) + 1
    return LeaderTrajectory(np.round(np.arange(n) * SAMPLE_DT, 10), np.full(n, float(v)))


def speed_pulse(duration: float, v: float, drop: float, t_start: float = 5.0,
                length: float = 4.0) -> LeaderTrajectory:
    """Constant speed with one smooth dip of depth ``drop`` lasting ``length`` seconds."""
    n = int(round(duration / SAMPLE_DT)) + 1
    t = np.round(np.arange(n) * SAMPLE_DT, 10)
    s = np.clip((t - t_start) / length, 0.0, 1.0)
    dip = drop * 0.5 * (1.0 - np.cos(2.0 * np.pi * s))
    return LeaderTrajectory(t, np.maximum(v - dip, 0.0))


@dataclass
class WaveField:
    """Background speed field consistent with the leader.

    The speed the leader drives at time tau is carried upstream at the
    congested wave speed, so the field at (x, t) equals the leader speed at
    the tau solving x_L(tau) - c*tau = x - c*t with c = w_back < 0.
    """

    traj: LeaderTrajectory
    x0: float = 0.0
    w_back: float = -5.0

    def __post_init__(self):
        self._x = self.traj.positions(self.x0)
        self._key = self._x - self.w_back * self.traj.t  # strictly increasing
        self._t = self.traj.t

    def speed(self, x, t):
        key = np.asarray(x, dtype=float) - self.w_back * np.asarray(t, dtype=float)
        tau = np.interp(key, self._key, self._t)  # clamps outside the recorded span
        return self.traj.speed_at(tau)
