"""Car-following acceleration laws (IDM, OVM, OVM-FtL / Bando-FtL).

Sign conventions differ between the two families and are kept as in their
usual literature forms:

* IDM takes ``dv = v - v_lead`` (positive when closing in on the leader).
* OVM-FtL takes the leader speed directly and uses ``v_lead - v``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class CollisionError(ValueError):
    """Raised when a car-following law is evaluated at a non-positive gap."""


@dataclass(frozen=True)
class IdmParams:
    v0: float = 30.0  # desired speed [m/s]
    T: float = 1.0  # time gap [s]
    s0: float = 2.0  # minimum spacing [m]
    delta: float = 4.0  # acceleration exponent
    a: float = 1.3  # max acceleration [m/s^2]
    b: float = 2.0  # comfortable deceleration, positive [m/s^2]

    def __post_init__(self):
        for name in ("v0", "T", "s0", "a", "b"):
            if not getattr(self, name) > 0:
                raise ValueError(f"IdmParams.{name} must be > 0")
        if self.delta < 1:
            raise ValueError("IdmParams.delta must be >= 1")


@dataclass(frozen=True)
class OvmParams:
    alpha: float = 0.6  # relaxation gain [1/s]
    beta: float = 20.0  # follow-the-leader coefficient [m^nu/s]
    nu: float = 2.0  # gap exponent of the FtL term
    v_max: float = 30.0  # [m/s]
    k: float = 0.1  # [1/m]
    d: float = 2.0
    l: float = 5.0  # car length [m]

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("OvmParams.alpha must be > 0")
        if self.beta < 0:
            raise ValueError("OvmParams.beta must be >= 0")
        if not self.nu > 0:
            raise ValueError("OvmParams.nu must be > 0")
        if not self.v_max > 0:
            raise ValueError("OvmParams.v_max must be > 0")


def _check_gap(gap):
    if np.any(np.asarray(gap) <= 0):
        raise CollisionError(f"non-positive gap {np.min(gap)!r}")


def idm_desired_gap(v, dv, p: IdmParams):
    return p.s0 + v * p.T + np.maximum(0.0, v * dv) / (2.0 * math.sqrt(p.a * p.b))


def idm_accel(gap, v, dv, p: IdmParams = IdmParams()):
    """IDM acceleration. Works elementwise on arrays.

    ``dv`` is the approach rate ``v - v_lead``.
    """
    _check_gap(gap)
    s_star = idm_desired_gap(v, dv, p)
    return p.a * (1.0 - (v / p.v0) ** p.delta - (s_star / gap) ** 2)


def idm_equilibrium_gap(v: float, p: IdmParams = IdmParams()) -> float:
    """Gap at which an IDM driver holds speed ``v`` behind an equal-speed leader."""
    if v < 0 or v >= p.v0:
        raise ValueError(f"no IDM equilibrium for v={v} (need 0 <= v < v0={p.v0})")
    return (p.s0 + v * p.T) / math.sqrt(1.0 - (v / p.v0) ** p.delta)


def bando_optimal_velocity(h, p: OvmParams = OvmParams()):
    """Optimal-velocity function V(h); monotone, saturates at ``v_max``."""
    c = math.tanh(p.l + p.d)
    return p.v_max * (np.tanh(p.k * h - p.d) + c) / (1.0 + c)


def bando_optimal_velocity_slope(h, p: OvmParams = OvmParams()):
    c = math.tanh(p.l + p.d)
    return p.v_max * p.k / np.cosh(p.k * h - p.d) ** 2 / (1.0 + c)


def ovm_accel(gap, v, p: OvmParams = OvmParams()):
    return p.alpha * (bando_optimal_velocity(gap, p) - v)


def ftl_accel(gap, v, v_lead, p: OvmParams = OvmParams()):
    return p.beta * (v_lead - v) / gap**p.nu


def ovm_ftl_accel(gap, v, v_lead, p: OvmParams = OvmParams()):
    """OVM plus follow-the-leader damping: alpha*(V(s)-v) + beta*(v_lead-v)/s**nu."""
    _check_gap(gap)
    return ovm_accel(gap, v, p) + ftl_accel(gap, v, v_lead, p)
