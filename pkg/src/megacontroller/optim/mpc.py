"""Car-following MPC as a linearly constrained QP, plus leader prediction.

The ego is a double integrator with piecewise-constant acceleration u_i
over steps of length dt. The QP is condensed onto u:

    v_i = v0 + dt * sum_{j<i} u_j
    x_i = x0 + i dt v0 + dt^2 * sum_{j<i} (i - j - 1/2) u_j

and minimizes dt * sum u_i^2 (plus an optional terminal speed term)
subject to accel bounds, 0 <= v_i <= v_limit and
x_i + length + s0 + tau v_i <= predicted leader position at step i.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..accel_controller import BaseControllerConfig, LocalObservation, commanded_accel
from .qp import QpInfeasible, kkt_residual, solve_qp

log = logging.getLogger(__name__)

SHORT_HORIZON = 2.0  # s of pure constant-acceleration extrapolation
BLEND_END = 4.0  # s at which the plan-based prediction takes over fully


@dataclass(frozen=True)
class QpProblem:
    N: int
    dt: float
    x0: float
    v0: float
    leader_x: np.ndarray  # predicted leader (rear-axle reference) position at steps 1..N
    v_limit: float = 35.0
    a_min: float = -3.0
    a_max: float = 1.5
    s0: float = 2.0
    tau: float = 1.0
    length: float = 5.0
    leader_v: np.ndarray | None = None  # if given, adds v_N <= leader_v[N-1] (terminal safe set)
    v_ref: float | None = None
    w_terminal: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "leader_x", np.asarray(self.leader_x, dtype=float))
        if self.N < 1:
            raise ValueError("horizon N must be >= 1")
        if self.leader_x.shape != (self.N,):
            raise ValueError(f"leader prediction needs {self.N} positions")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.a_min < self.a_max:
            raise ValueError("need a_min < a_max")
        if not self.v_limit > 0:
            raise ValueError("v_limit must be positive")
        if self.leader_v is not None:
            object.__setattr__(self, "leader_v", np.asarray(self.leader_v, dtype=float))

    def state_maps(self):
        """Matrices (Mx, cx, Mv, cv) with x = Mx u + cx and v = Mv u + cv over steps 1..N."""
        N, dt = self.N, self.dt
        i = np.arange(1, N + 1)[:, None]
        j = np.arange(N)[None, :]
        Mv = dt * (j < i)
        Mx = dt * dt * np.where(j < i, i - j - 0.5, 0.0)
        cv = np.full(N, self.v0)
        cx = self.x0 + i[:, 0] * dt * self.v0
        return Mx, cx, Mv, cv

    def matrices(self):
        """(G, a, C, b) for  min 1/2 u'Gu + a'u  s.t.  C u >= b."""
        N, dt = self.N, self.dt
        Mx, cx, Mv, cv = self.state_maps()
        G = 2.0 * dt * np.eye(N)
        a = np.zeros(N)
        if self.w_terminal > 0:
            if self.v_ref is None:
                raise ValueError("terminal weight needs v_ref")
            g = Mv[-1]
            G = G + 2.0 * self.w_terminal * np.outer(g, g)
            a = a + 2.0 * self.w_terminal * (cv[-1] - self.v_ref) * g
        I = np.eye(N)
        rows = [I, -I, Mv, -Mv, -(Mx + self.tau * Mv)]
        rhs = [np.full(N, self.a_min), np.full(N, -self.a_max), -cv, cv - self.v_limit,
               cx + self.tau * cv - (self.leader_x - self.length - self.s0)]
        if self.leader_v is not None:
            rows.append(-Mv[-1:])
            rhs.append(np.array([cv[-1] - self.leader_v[-1]]))
        return G, a, np.vstack(rows), np.concatenate(rhs)

    def objective(self, u) -> float:
        G, a, _, _ = self.matrices()
        u = np.asarray(u, dtype=float)
        return float(0.5 * u @ G @ u + a @ u)

    def feasible(self, u, tol: float = 1e-9) -> bool:
        _, _, C, b = self.matrices()
        return bool(np.all(C @ np.asarray(u, dtype=float) - b >= -tol))


@dataclass
class MpcSolution:
    u: np.ndarray
    x: np.ndarray
    v: np.ndarray
    objective: float
    status: str  # "optimal" or "fallback"
    kkt: dict = field(default_factory=dict)
    message: str = ""


def mpc_solve(problem: QpProblem, fallback_obs: LocalObservation | None = None,
              fallback_cfg: BaseControllerConfig = BaseControllerConfig()) -> MpcSolution:
    """Optimal accel sequence; on infeasibility returns the base controller's command.

    The fallback holds ``commanded_accel`` over the whole horizon. Without
    ``fallback_obs`` one is built from the ego state and the first predicted
    leader position.
    """
    G, a, C, b = problem.matrices()
    Mx, cx, Mv, cv = problem.state_maps()
    try:
        res = solve_qp(G, a, C, b)
    except QpInfeasible as exc:
        if fallback_obs is None:
            gap = float(problem.leader_x[0] - problem.length - problem.x0)
            v_lead = float(problem.leader_v[0]) if problem.leader_v is not None else problem.v0
            fallback_obs = LocalObservation(v=problem.v0, v_lead=v_lead, h=max(gap, 1e-3), minicar=True)
        cmd = commanded_accel(fallback_obs, fallback_cfg)
        u = np.full(problem.N, cmd)
        log.warning("MPC infeasible (%s); falling back to base controller command %.3f", exc, cmd)
        return MpcSolution(u, Mx @ u + cx, Mv @ u + cv, problem.objective(u), "fallback", message=str(exc))
    u = res.x
    return MpcSolution(u, Mx @ u + cx, Mv @ u + cv, res.objective, "optimal", kkt_residual(res, G, a, C, b))


def leader_predict(x: float, v: float, a: float, times, plan=None,
                   short: float = SHORT_HORIZON, blend_end: float = BLEND_END) -> np.ndarray:
    """Predicted leader positions at ``times`` (seconds ahead, >= 0).

    Short term: constant acceleration from the observed state, with the
    leader halting at zero speed. Long term: the leader moves at the target
    speed ``plan(position)`` (or at its current speed when no plan is given),
    integrated forward from the current position. The two are blended with
    a weight rising linearly from 0 at ``short`` to 1 at ``blend_end``.
    """
    times = np.asarray(times, dtype=float)
    if np.any(times < 0):
        raise ValueError("prediction times must be non-negative")
    if a < 0 and v > 0:
        t_stop = v / -a
        tt = np.minimum(times, t_stop)
        kin = x + v * tt + 0.5 * a * tt * tt
    elif a < 0:
        kin = np.full_like(times, x)
    else:
        kin = x + v * times + 0.5 * a * times * times
    if plan is None:
        far = x + v * times
    else:
        far = np.empty_like(times)
        order = np.argsort(times)
        pos, t_now, h = float(x), 0.0, 0.1
        for k in order:
            while t_now < times[k] - 1e-12:
                step = min(h, times[k] - t_now)
                pos += step * max(float(plan(pos)), 0.0)
                t_now += step
            far[k] = pos
    w = np.clip((times - short) / (blend_end - short), 0.0, 1.0)
    return (1.0 - w) * kin + w * far


@dataclass
class Rollout:
    t: np.ndarray
    x: np.ndarray
    v: np.ndarray
    u: np.ndarray
    leader_x: np.ndarray
    min_gap_margin: float  # min over ticks of gap - (s0 + tau v); negative means violated
    fallbacks: int
    prediction_rmse: float  # vs the realized leader positions, over the whole horizon


def mpc_rollout(leader_t, leader_x, x0: float, v0: float, N: int = 30, exact_prediction: bool = True,
                plan=None, **qp_kwargs) -> Rollout:
    """Receding-horizon loop behind a recorded leader; dispatches u_0 at each tick.

    ``leader_t`` must be uniformly spaced; its spacing is the MPC step. With
    ``exact_prediction`` the QP sees the future leader positions (padded with
    constant-speed extrapolation past the record); otherwise it uses
    ``leader_predict`` with finite-difference speed and acceleration.
    """
    leader_t = np.asarray(leader_t, dtype=float)
    leader_x = np.asarray(leader_x, dtype=float)
    dt = float(leader_t[1] - leader_t[0])
    K = leader_t.size - 1
    v_l = np.gradient(leader_x, dt)
    a_l = np.gradient(v_l, dt)
    pad = np.arange(1, N + 1) * dt
    ext_x = np.concatenate((leader_x, leader_x[-1] + v_l[-1] * pad))
    ext_v = np.concatenate((v_l, np.full(N, v_l[-1])))
    x = np.empty(K + 1)
    v = np.empty(K + 1)
    u = np.zeros(K)
    x[0], v[0] = x0, v0
    fallbacks = 0
    err2, n_err = 0.0, 0
    s0 = qp_kwargs.get("s0", QpProblem.s0)
    tau = qp_kwargs.get("tau", QpProblem.tau)
    length = qp_kwargs.get("length", QpProblem.length)
    for k in range(K):
        truth = ext_x[k + 1:k + N + 1]
        if exact_prediction:
            pred, pred_v = truth, ext_v[k + 1:k + N + 1]
        else:
            pred = leader_predict(leader_x[k], v_l[k], a_l[k], pad, plan)
            pred_v = None
        err2 += float(np.sum((pred - truth) ** 2))
        n_err += N
        prob = QpProblem(N, dt, x[k], v[k], pred, leader_v=pred_v, **qp_kwargs)
        sol = mpc_solve(prob)
        fallbacks += sol.status != "optimal"
        u[k] = sol.u[0]
        x[k + 1] = x[k] + dt * v[k] + 0.5 * dt * dt * u[k]
        v[k + 1] = v[k] + dt * u[k]
    margin = float(np.min(leader_x - length - x - (s0 + tau * v)))
    return Rollout(leader_t, x, v, u, leader_x, margin, fallbacks, float(np.sqrt(err2 / max(n_err, 1))))
