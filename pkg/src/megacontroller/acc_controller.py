"""ACC-based vehicle controller.

The stock ACC is modelled as a two-mode plant (speed tracking / gap
tracking). The controller never actuates acceleration directly: it picks a
speed setting (mph) and a gap bar, which reach the plant through simulated
button presses.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Callable

MPH = 0.44704  # m/s per mph
SPEED_SETTING_MIN = 20
SPEED_SETTING_MAX = 73
GAP_BAR_TIME_GAP = {1: 1.2, 2: 1.5, 3: 2.0}


@dataclass(frozen=True)
class AccSetpoints:
    speed_setting: int  # mph
    gap_setting: int  # bars, 1..3

    def __post_init__(self):
        if self.gap_setting not in GAP_BAR_TIME_GAP:
            raise ValueError(f"gap setting must be 1, 2 or 3, got {self.gap_setting}")
        if not SPEED_SETTING_MIN <= self.speed_setting <= SPEED_SETTING_MAX:
            raise ValueError(f"speed setting {self.speed_setting} outside "
                             f"[{SPEED_SETTING_MIN}, {SPEED_SETTING_MAX}] mph")

    @property
    def v_ref(self) -> float:
        return self.speed_setting * MPH

    @property
    def time_gap(self) -> float:
        return GAP_BAR_TIME_GAP[self.gap_setting]


@dataclass
class AccObservation:
    v: float  # m/s
    v_s: float | None  # planner target, m/s (None when no plan)
    minicar: bool
    s: int  # current speed setting, mph
    g: int  # current gap bar


@dataclass(frozen=True)
class AccPlantParams:
    k_p: float = 0.4  # speed mode gain [1/s]
    k_g: float = 0.1  # gap mode gain on gap error [1/s^2]
    k_v: float = 0.5  # gap mode gain on relative speed [1/s]
    d_off: float = 3.0  # standstill offset [m]
    gap_mode_range: float = 120.0  # radar range for gap mode [m]
    a_min: float = -3.0
    a_max: float = 1.5

    def __post_init__(self):
        for name in ("k_p", "k_g", "k_v"):
            if not getattr(self, name) > 0:
                raise ValueError(f"AccPlantParams.{name} must be positive")


@dataclass(frozen=True)
class RewardParams:
    c1: float = 0.1
    c2: float = 0.01
    c3: float = 0.5
    c4: float = 1.0
    h_min: float = 5.0
    h_max: float = 150.0


def speed_mode_accel(v_e, v_ref, p: AccPlantParams) -> float:
    return p.k_p * (v_ref - v_e)


def gap_mode_accel(v_e, v_l, d_el, g_ref, p: AccPlantParams) -> float:
    return p.k_g * (d_el - g_ref * v_e - p.d_off) + p.k_v * (v_l - v_e)


def acc_plant_accel(v_e: float, v_l: float | None, d_el: float | None,
                    setpoints: AccSetpoints, p: AccPlantParams = AccPlantParams()) -> float:
    """Acceleration produced by the stock ACC for the given setpoints.

    Gap mode is used when a leader is within radar range and asks for less
    acceleration than speed mode, so the car never exceeds the speed setting.
    """
    if not isinstance(setpoints, AccSetpoints):
        raise TypeError("setpoints must be AccSetpoints")
    a = speed_mode_accel(v_e, setpoints.v_ref, p)
    if d_el is not None and v_l is not None and d_el < p.gap_mode_range:
        if d_el <= 0:
            raise ValueError("gap must be positive when a leader exists")
        a = min(a, gap_mode_accel(v_e, v_l, d_el, setpoints.time_gap, p))
    return min(max(a, p.a_min), p.a_max)


def clip_speed_setting(action_mph: float, recent_speeds_mph, previous: int | None = None) -> int | float:
    """Clip a requested speed setting to the band around recent ego speed.

    ``recent_speeds_mph`` are the last ten samples; zeros and None are
    ignored. With nothing valid the previous setting is held.
    """
    valid = [s for s in recent_speeds_mph if s is not None and s != 0]
    if not valid:
        if previous is None:
            raise ValueError("no valid recent speeds and no previous setting to hold")
        return previous
    mean = sum(valid) / len(valid)
    v_clip = min(max(action_mph, mean - 15.0), mean + 5.0)
    return min(max(v_clip, SPEED_SETTING_MIN), SPEED_SETTING_MAX)


def heuristic_action(obs: AccObservation) -> tuple[float, int] | None:
    """Raw (unclipped) decision: speed request in mph and gap bar.

    Tracks the planner target and widens the gap when the target is well
    below the current speed (a slowdown is coming). None means no
    information, i.e. hold the current setpoints.
    """
    if obs.v_s is None:
        return None
    v_mph = obs.v / MPH
    target_mph = obs.v_s / MPH
    bar = 3 if target_mph < v_mph - 5.0 else 1
    return float(round(target_mph)), bar


def apply_clipping(action, obs: AccObservation, recent_speeds_mph) -> AccSetpoints:
    if action is None:
        return AccSetpoints(obs.s, obs.g)
    speed, bar = action
    recent = list(recent_speeds_mph) or [obs.v / MPH]
    setting = clip_speed_setting(speed, recent, previous=obs.s)
    return AccSetpoints(int(round(setting)), bar)


def heuristic_policy(obs: AccObservation, recent_speeds_mph=()) -> AccSetpoints:
    """Heuristic decision followed by the safety clip."""
    return apply_clipping(heuristic_action(obs), obs, recent_speeds_mph)


def button_presses(current: int, requested: int) -> list[int]:
    """Sequence of setting increments: holds move 5 mph, taps move 1 mph."""
    delta = requested - current
    sign = 1 if delta > 0 else -1
    n_hold, n_tap = divmod(abs(delta), 5)
    return [5 * sign] * n_hold + [sign] * n_tap


def reward(accel: float, v_av: float, v_sp: float, fuel_rates, gap: float,
           p: RewardParams = RewardParams()) -> float:
    n = len(fuel_rates)
    if n < 1:
        raise ValueError("reward needs at least one platoon vehicle")
    r = 1.0 - p.c1 * accel**2 - p.c2 * (v_av - v_sp) ** 2 - p.c3 / n * sum(fuel_rates)
    if gap <= p.h_min or gap >= p.h_max:
        r -= p.c4
    return r


Decision = Callable[[AccObservation], "tuple[float, int] | None"]


@dataclass
class AccController:
    """Per-vehicle ACC controller: decision -> clip -> button presses -> plant.

    ``decide`` is any function from AccObservation to a raw action, so a
    trained policy can replace the heuristic.

    A setpoint change becomes effective ``press_latency`` seconds after it is
    requested; gap changes are applied before speed changes.
    """

    plant: AccPlantParams = field(default_factory=AccPlantParams)
    decide: Decision = heuristic_action
    dt: float = 0.1
    press_latency: float = 0.5
    policy_period: float = 1.0
    setpoints: AccSetpoints | None = None
    pending: list = field(default_factory=list)  # (due_time, AccSetpoints)
    recent_mph: deque = field(default_factory=lambda: deque(maxlen=10))
    press_log: list = field(default_factory=list)
    policy_log: list = field(default_factory=list)
    tick: int = 0
    last: dict = field(default_factory=dict)

    @property
    def t(self) -> float:
        return self.tick * self.dt

    def init_setpoints(self, v: float):
        mph = int(round(v / MPH))
        mph = min(max(mph, SPEED_SETTING_MIN), SPEED_SETTING_MAX)
        self.setpoints = AccSetpoints(mph, 1)

    def _apply_due(self):
        while self.pending and self.pending[0][0] <= self.t + 1e-9:
            _, sp = self.pending.pop(0)
            self.setpoints = sp

    def _request(self, req: AccSetpoints):
        base = self.pending[-1][1] if self.pending else self.setpoints
        if req == base:
            return
        due = self.t + self.press_latency
        if req.gap_setting != base.gap_setting:
            presses = (req.gap_setting - base.gap_setting) % 3
            self.press_log.append((round(self.t, 6), "gap", presses, base.gap_setting, req.gap_setting))
        for inc in button_presses(base.speed_setting, req.speed_setting):
            self.press_log.append((round(self.t, 6), "hold" if abs(inc) == 5 else "tap", inc,
                                   base.speed_setting, req.speed_setting))
        self.pending.append((due, req))

    def __call__(self, v: float, v_l: float | None, d_el: float | None, v_s: float | None,
                 minicar: bool) -> float:
        if self.setpoints is None:
            self.init_setpoints(v)
        self._apply_due()
        self.recent_mph.append(v / MPH)
        tick = self.tick
        period = max(1, int(round(self.policy_period / self.dt)))
        if tick % period == 0:
            obs = AccObservation(v=v, v_s=v_s, minicar=minicar, s=self.setpoints.speed_setting,
                                 g=self.setpoints.gap_setting)
            action = self.decide(obs)
            req = apply_clipping(action, obs, self.recent_mph)
            raw_speed, raw_bar = action if action is not None else (None, None)
            self.policy_log.append((tick, v, v_s, minicar, obs.s, obs.g, raw_speed, raw_bar,
                                    req.speed_setting, req.gap_setting))
            self._request(req)
        a = acc_plant_accel(v, v_l, d_el, self.setpoints, self.plant)
        self.last = {"speed_setting": self.setpoints.speed_setting,
                     "gap_setting": self.setpoints.gap_setting, "u": a}
        self.tick += 1
        return a
