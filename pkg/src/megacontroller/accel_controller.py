"""Acceleration-based vehicle controller.

The base controller is a min-composition of three components (safety,
target tracking, leader anticipation). A lane-change recovery filter wraps
the base output and smooths jumps caused by gap discontinuities.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field


@dataclass(frozen=True)
class BaseControllerConfig:
    k: float = 1.0  # [1/s]
    k2: float = 0.1  # [s/m]
    s0: float = 4.0  # safety distance [m]
    a_min: float = -3.0  # [m/s^2]
    a_max: float = 1.5  # [m/s^2]
    a_l_min: float = -6.0  # hardest leader braking assumed [m/s^2]
    a_lead_tau: float = 0.5  # low-pass on leader accel for d/dt v_safe [s]
    target_tau: float = 30.0  # EMA of leader speed when no plan [s]
    sensor_range: float = 80.0  # leader detection range [m]

    def __post_init__(self):
        if not (self.k > 0 and self.k2 > 0):
            raise ValueError("k and k2 must be positive")
        if not self.a_min < 0 < self.a_max:
            raise ValueError("need a_min < 0 < a_max")
        if not self.a_l_min < 0:
            raise ValueError("a_l_min must be negative")


@dataclass(frozen=True)
class LcConfig:
    c: float = 0.75
    t_star: float = 1.32
    dv_star: float = 10.3
    h_safe: float = 2.0  # [s]
    C_safe: float = 4.5  # [s]
    eps: float = 0.05  # deactivation threshold [m/s^2]
    jerk_threshold: float = 4.0  # [m/s^3]
    gap_jump: float = 2.0  # unexplained gap change counted as a discontinuity [m]
    alpha_max: float = 0.99  # keeps the smoothing factor strictly below 1
    safety_release: bool = True  # drop the filter once TTC falls to C_safe
    dt: float = 0.1

    def __post_init__(self):
        if not 0 <= self.c <= 1:
            raise ValueError("c must lie in [0, 1]")
        for name in ("t_star", "dv_star", "h_safe", "C_safe", "eps", "jerk_threshold", "dt"):
            if not getattr(self, name) > 0:
                raise ValueError(f"LcConfig.{name} must be positive")
        if not 0 <= self.alpha_max < 1:
            raise ValueError("alpha_max must lie in [0, 1)")


@dataclass
class LocalObservation:
    v: float
    v_lead: float = 0.0
    a_lead: float = 0.0
    h: float = math.inf
    v_target: float | None = None
    minicar: bool = False

    @property
    def dv(self) -> float:
        """Relative speed, leader minus ego."""
        return self.v_lead - self.v


def _clamp(x, lo, hi):
    return lo if x < lo else hi if x > hi else x


def safe_speed(h, v_lead, cfg: BaseControllerConfig) -> float:
    return math.sqrt(2.0 * abs(cfg.a_min) * (h - cfg.s0 + 0.5 * v_lead**2 / abs(cfg.a_l_min)))


def safe_accel(obs: LocalObservation, cfg: BaseControllerConfig = BaseControllerConfig(),
               a_lead_filtered: float | None = None) -> float:
    if obs.h <= cfg.s0:
        return cfg.a_min
    a_lead = obs.a_lead if a_lead_filtered is None else a_lead_filtered
    v_safe = safe_speed(obs.h, obs.v_lead, cfg)
    # chain rule through h and v_lead
    h_dot = obs.v_lead - obs.v
    v_safe_dot = abs(cfg.a_min) * (h_dot + obs.v_lead * a_lead / abs(cfg.a_l_min)) / v_safe
    return -cfg.k * (obs.v - v_safe) + v_safe_dot


def target_accel(obs: LocalObservation, cfg: BaseControllerConfig = BaseControllerConfig()) -> float:
    if obs.v_target is None:
        raise ValueError("target_accel needs a target speed")
    return -cfg.k * (obs.v - obs.v_target)


def min_brake_accel(h, v, v_lead, a_lead, s0) -> float:
    """Deceleration that stops the ego within the leader's braking distance plus gap."""
    return -(v * v / 2.0) / (h - s0 + 0.5 * v_lead**2 / (-a_lead))


def mpc_branch(obs: LocalObservation, cfg: BaseControllerConfig = BaseControllerConfig()) -> int:
    """Index (1-5) of the anticipation branch selected for ``obs``."""
    p2 = obs.v_lead - obs.v
    if obs.a_lead < 0:
        if obs.v_lead <= 0:
            return 1
        p1 = min_brake_accel(obs.h, obs.v, obs.v_lead, obs.a_lead, cfg.s0) - obs.a_lead * obs.v / obs.v_lead
        if p1 > 0:
            return 1
        return 2 if p2 >= 0 else 3
    return 4 if p2 < 0 else 5


def mpc_anticipation_accel(obs: LocalObservation, cfg: BaseControllerConfig = BaseControllerConfig()) -> float:
    branch = mpc_branch(obs, cfg)
    if branch == 1:
        return min_brake_accel(obs.h, obs.v, obs.v_lead, obs.a_lead, cfg.s0)
    if branch == 2:
        return obs.a_lead * obs.v / obs.v_lead
    if branch in (3, 4):
        return obs.a_lead - (obs.v - obs.v_lead) ** 2 / (2.0 * (obs.h - cfg.s0))
    return min(cfg.a_max, obs.a_lead * (1.0 + cfg.k2 * (obs.v_lead - obs.v)))


def base_components(obs: LocalObservation, cfg: BaseControllerConfig = BaseControllerConfig(),
                    a_lead_filtered: float | None = None) -> dict:
    """All three components plus the clamped min. Missing components are None."""
    a_target = target_accel(obs, cfg) if obs.v_target is not None else None
    if obs.minicar:
        a_safe = safe_accel(obs, cfg, a_lead_filtered)
        a_mpc = cfg.a_min if obs.h <= cfg.s0 else mpc_anticipation_accel(obs, cfg)
    else:
        a_safe = a_mpc = None
    parts = [a for a in (a_safe, a_target, a_mpc) if a is not None]
    raw = min(parts) if parts else 0.0
    return {"a_safe": a_safe, "a_target": a_target, "a_mpc": a_mpc,
            "a_cmd": _clamp(raw, cfg.a_min, cfg.a_max)}


def commanded_accel(obs: LocalObservation, cfg: BaseControllerConfig = BaseControllerConfig(),
                    a_lead_filtered: float | None = None) -> float:
    """min(a_safe, a_target, a_MPC) clamped to [a_min, a_max].

    Without a detected leader only the target component is used.
    """
    return base_components(obs, cfg, a_lead_filtered)["a_cmd"]


# -- lane-change recovery -------------------------------------------------------


def headway_factor(s, v, cfg: LcConfig = LcConfig()) -> float:
    if v <= 0 or math.isinf(s):
        return 1.0
    return math.tanh(cfg.t_star * s / v)


def relative_speed_factor(dv, s, cfg: LcConfig = LcConfig()) -> float:
    if dv < 0:
        arg = math.inf if math.isinf(s) else cfg.dv_star * s / abs(dv)
        return 0.5 * math.tanh(arg) + 0.5
    return 0.5 * math.tanh(dv) + 0.5


def smoothing_factor(s, v, dv, cfg: LcConfig = LcConfig()) -> float:
    alpha = cfg.c * headway_factor(s, v, cfg) + (1.0 - cfg.c) * relative_speed_factor(dv, s, cfg)
    return min(alpha, cfg.alpha_max)


def lc_safe(s, v, dv, cfg: LcConfig = LcConfig()) -> bool:
    """TTC test when closing, time-gap test otherwise."""
    if math.isinf(s):
        return True
    if dv < 0:
        return s / abs(dv) > cfg.C_safe
    return v <= 0 or s / v > cfg.h_safe


@dataclass
class LcFilterState:
    active: bool = False
    u_prev: float | None = None
    prev_obs: LocalObservation | None = None
    activations: int = 0


def gap_discontinuity(obs: LocalObservation, prev: LocalObservation | None, cfg: LcConfig) -> bool:
    if prev is None:
        return False
    if obs.minicar != prev.minicar:
        return True
    if not obs.minicar:
        return False
    expected = prev.h + prev.dv * cfg.dt
    return abs(obs.h - expected) > cfg.gap_jump


def lc_detect_and_filter(u_prev: float | None, a_k: float, obs: LocalObservation,
                         state: LcFilterState, cfg: LcConfig = LcConfig()) -> float:
    """Return the command to actuate; mutates ``state``.

    ``state.prev_obs`` holds the previous observation; ``u_prev`` is the
    previously actuated command (None on the first tick).
    """
    s = obs.h if obs.minicar else math.inf
    dv = obs.dv if obs.minicar else 0.0
    if u_prev is None:
        u = a_k
    elif not state.active:
        jerk = abs(a_k - u_prev) / cfg.dt
        if (gap_discontinuity(obs, state.prev_obs, cfg) and jerk > cfg.jerk_threshold
                and lc_safe(s, obs.v, dv, cfg)):
            state.active = True
            state.activations += 1
        u = a_k
    if state.active and u_prev is not None:
        if cfg.safety_release and dv < 0 and s / abs(dv) <= cfg.C_safe:
            state.active = False
            u = a_k
        else:
            alpha = smoothing_factor(s, obs.v, dv, cfg)
            u = alpha * u_prev + (1.0 - alpha) * a_k
            if abs(a_k - u) <= cfg.eps:
                state.active = False
    state.prev_obs = obs
    state.u_prev = u
    return u


@dataclass
class AccelController:
    """Per-vehicle stateful wrapper: base controller + lane-change filter."""

    cfg: BaseControllerConfig = field(default_factory=BaseControllerConfig)
    lc: LcConfig | None = field(default_factory=LcConfig)
    dt: float = 0.1
    a_lead_f: float | None = None
    v_ema: float | None = None
    lc_state: LcFilterState = field(default_factory=LcFilterState)
    last: dict = field(default_factory=dict)

    def fallback_target(self, obs: LocalObservation) -> float:
        ref = obs.v_lead if obs.minicar else obs.v
        if self.v_ema is None:
            self.v_ema = ref
        else:
            w = 1.0 - math.exp(-self.dt / self.cfg.target_tau)
            self.v_ema += w * (ref - self.v_ema)
        return self.v_ema

    def __call__(self, obs: LocalObservation) -> float:
        ema = self.fallback_target(obs)
        if obs.v_target is None:
            obs.v_target = ema
        if obs.minicar:
            if self.a_lead_f is None:
                self.a_lead_f = obs.a_lead
            else:
                w = 1.0 - math.exp(-self.dt / self.cfg.a_lead_tau)
                self.a_lead_f += w * (obs.a_lead - self.a_lead_f)
        comps = base_components(obs, self.cfg, self.a_lead_f)
        a_k = comps["a_cmd"]
        if self.lc is None:
            u = a_k
        else:
            u = lc_detect_and_filter(self.lc_state.u_prev, a_k, obs, self.lc_state, self.lc)
        comps["u"] = u
        comps["v_target"] = obs.v_target
        comps["lc_active"] = bool(self.lc is not None and self.lc_state.active)
        self.last = comps
        return u
