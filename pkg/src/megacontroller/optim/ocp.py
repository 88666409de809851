"""Platoon trajectory optimal control with adjoint gradients.

A single-lane platoon follows a prescribed leader. Human vehicles obey the
Bando follow-the-leader model, AVs apply piecewise-constant accelerations
on a mesh of equal pieces. Dynamics are integrated with forward Euler at
step dt, and the objective is

    J(u) = dt * sum_k ( sum_AV u_k^2 + sum_human A_k^2 ),

the discrete counterpart of the L2 norm of all accelerations. The gap
envelope  h_min v + d_min <= gap <= h_max v + d_max  and v >= 0 on AVs
are handled with a quadratic penalty

    P(u) = mu * dt * sum_{k>=1} sum_AV ( relu(lo)^2 + relu(hi)^2 + relu(-v)^2 ).

The gradient of J + P is computed exactly for the discrete scheme by a
backward (adjoint) sweep; a central finite-difference gradient is provided
as an independent check.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np

from ..cfm import OvmParams, bando_optimal_velocity, bando_optimal_velocity_slope
from ..energy import EnergyModel, default_model, fuel_rate
from ..leader import LeaderTrajectory


# Platoon model for trajectory optimization. With the car-following
# defaults (alpha = 0.6, k = 0.1) a 24-car human platoon behind the
# stop-and-go leader amplifies the waves until it collides; a larger gain and
# softer optimal-velocity slope keep it collision-free but string unstable.
OCP_BANDO = OvmParams(alpha=1.0, k=0.05)


class OcpInfeasible(RuntimeError):
    """No collision-free control schedule was found; carries a violation table."""

    def __init__(self, message: str, violations: dict | None = None):
        super().__init__(message)
        self.violations = violations or {}


@dataclass(frozen=True)
class OcpProblem:
    leader_x: np.ndarray  # leader position at ticks 0..K
    leader_v: np.ndarray
    kinds: tuple  # "av" or "human", front (right behind the leader) to back
    x0: np.ndarray
    v0: np.ndarray
    dt: float = 0.2
    n_pieces: int = 30
    bando: OvmParams = OCP_BANDO
    h_min: float = 0.5
    h_max: float = 3.0
    d_min: float = 5.0
    d_max: float = 40.0
    u_min: float = -3.0
    u_max: float = 1.5
    penalty: float = 100.0

    def __post_init__(self):
        for name in ("leader_x", "leader_v", "x0", "v0"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        object.__setattr__(self, "kinds", tuple(self.kinds))
        if not self.h_min < self.h_max:
            raise ValueError("need h_min < h_max")
        if not self.d_min < self.d_max:
            raise ValueError("need d_min < d_max")
        if not (self.dt > 0 and self.K > 0):
            raise ValueError("horizon T must be positive")
        if self.leader_v.shape != self.leader_x.shape:
            raise ValueError("leader position and speed must have the same length")
        if not 1 <= self.n_pieces <= self.K:
            raise ValueError("need 1 <= n_pieces <= number of steps")
        if set(self.kinds) - {"av", "human"}:
            raise ValueError("vehicle kinds must be 'av' or 'human'")
        n = len(self.kinds)
        if self.x0.shape != (n,) or self.v0.shape != (n,):
            raise ValueError("initial state must have one entry per vehicle")
        if not self.u_min < self.u_max:
            raise ValueError("need u_min < u_max")

    @property
    def K(self) -> int:
        return self.leader_x.size - 1

    @property
    def T(self) -> float:
        return self.K * self.dt

    @property
    def n(self) -> int:
        return len(self.kinds)

    @property
    def av_index(self) -> np.ndarray:
        return np.array([i for i, k in enumerate(self.kinds) if k == "av"], dtype=int)

    def piece_of_step(self) -> np.ndarray:
        """Mesh piece index of each Euler step (equal pieces, remainder spread)."""
        return (np.arange(self.K) * self.n_pieces) // self.K

    def piece_starts(self) -> np.ndarray:
        p = self.piece_of_step()
        return np.array([np.argmax(p == j) for j in range(self.n_pieces)]) * self.dt

    def all_human(self) -> "OcpProblem":
        return replace(self, kinds=("human",) * self.n)


def platoon_problem(leader: LeaderTrajectory, av_positions, n_vehicles: int, dt: float = 0.2,
                    n_pieces: int | None = None, piece_length: float = 10.0, **kw) -> OcpProblem:
    """Equilibrium-spaced platoon behind a 10 Hz leader resampled to step ``dt``."""
    stride = int(round(dt / (leader.t[1] - leader.t[0])))
    if stride < 1 or abs(stride * (leader.t[1] - leader.t[0]) - dt) > 1e-9:
        raise ValueError("dt must be a multiple of the leader sample spacing")
    lx = leader.positions()[::stride]
    lv = leader.v[::stride]
    p = kw.get("bando", OCP_BANDO)
    v_init = float(lv[0])
    gap = bando_equilibrium_gap(v_init, p)
    x0 = lx[0] - (np.arange(1, n_vehicles + 1)) * (gap + p.l)
    kinds = tuple("av" if i in set(av_positions) else "human" for i in range(n_vehicles))
    K = lx.size - 1
    if n_pieces is None:
        n_pieces = max(1, int(round(K * dt / piece_length)))
    return OcpProblem(lx, lv, kinds, x0, np.full(n_vehicles, v_init), dt=dt, n_pieces=n_pieces, **kw)


def bando_equilibrium_gap(v: float, p: OvmParams = OvmParams()) -> float:
    """Gap at which the optimal velocity equals ``v`` (inverse of V)."""
    c = math.tanh(p.l + p.d)
    y = v * (1.0 + c) / p.v_max - c
    if not -1.0 < y < 1.0:
        raise ValueError(f"speed {v} outside the range of the optimal-velocity function")
    return (math.atanh(y) + p.d) / p.k


@dataclass
class OcpEvaluation:
    objective: float  # dt * sum of squared accelerations (inf on collision)
    penalty: float
    collided: bool
    x: np.ndarray | None = None  # (K+1, n)
    v: np.ndarray | None = None
    a: np.ndarray | None = None  # (K, n) applied accelerations
    violations: dict = field(default_factory=dict)
    message: str = ""

    @property
    def merit(self) -> float:
        return self.objective + self.penalty


def _check_controls(u, prob: OcpProblem) -> np.ndarray:
    u = np.asarray(u, dtype=float).reshape(prob.n_pieces, -1)
    if u.shape[1] != prob.av_index.size:
        raise ValueError(f"controls need shape ({prob.n_pieces}, {prob.av_index.size})")
    return u


def _forward(u, prob: OcpProblem, keep_partials: bool):
    p = prob.bando
    n, K, dt = prob.n, prob.K, prob.dt
    av = prob.av_index
    human = np.array([k == "human" for k in prob.kinds])
    piece = prob.piece_of_step()
    X = np.empty((K + 1, n))
    V = np.empty((K + 1, n))
    Acc = np.empty((K, n))
    if keep_partials:
        Ah = np.zeros((K, n))
        Av = np.zeros((K, n))
        Avl = np.zeros((K, n))
    X[0], V[0] = prob.x0, prob.v0
    for k in range(K):
        x, v = X[k], V[k]
        x_pred = np.concatenate(([prob.leader_x[k]], x[:-1]))
        v_pred = np.concatenate(([prob.leader_v[k]], v[:-1]))
        h = x_pred - x - p.l
        if np.any(h <= 0):
            return None, k
        hn = h**p.nu
        a = p.alpha * (bando_optimal_velocity(h, p) - v) + p.beta * (v_pred - v) / hn
        a[av] = u[piece[k]]
        Acc[k] = a
        if keep_partials:
            Ah[k] = np.where(human, p.alpha * bando_optimal_velocity_slope(h, p)
                             - p.nu * p.beta * (v_pred - v) / (hn * h), 0.0)
            Av[k] = np.where(human, -p.alpha - p.beta / hn, 0.0)
            Avl[k] = np.where(human, p.beta / hn, 0.0)
        X[k + 1] = x + dt * v
        V[k + 1] = v + dt * a
    h = np.concatenate(([prob.leader_x[K]], X[K, :-1])) - X[K] - p.l
    if np.any(h <= 0):
        return None, K
    out = (X, V, Acc)
    if keep_partials:
        out = out + (Ah, Av, Avl)
    return out, None


def _envelope_terms(X, V, prob: OcpProblem):
    """Per-tick, per-AV envelope residuals (lo, hi, neg) for ticks 1..K; positive = violated."""
    av = prob.av_index
    pred = np.concatenate((prob.leader_x[:, None], X[:, :-1]), axis=1)
    gap = pred[1:, av] - X[1:, av] - prob.bando.l
    v = V[1:, av]
    lo = prob.h_min * v + prob.d_min - gap
    hi = gap - prob.h_max * v - prob.d_max
    return lo, hi, -v


def ocp_evaluate(u, prob: OcpProblem, keep_states: bool = True) -> OcpEvaluation:
    u = _check_controls(u, prob)
    if np.any(u < prob.u_min - 1e-12) or np.any(u > prob.u_max + 1e-12):
        raise ValueError("controls outside the admissible bounds")
    out, k_coll = _forward(u, prob, keep_partials=False)
    if out is None:
        return OcpEvaluation(math.inf, math.inf, True, message=f"collision at step {k_coll} "
                             f"(t = {k_coll * prob.dt:.1f} s)")
    X, V, Acc = out
    J = prob.dt * float(np.sum(Acc**2))
    lo, hi, neg = _envelope_terms(X, V, prob)
    P = prob.penalty * prob.dt * float(np.sum(np.maximum(lo, 0) ** 2 + np.maximum(hi, 0) ** 2
                                              + np.maximum(neg, 0) ** 2))
    viol = {
        "gap_below_envelope_m": float(np.max(lo, initial=0.0)),
        "gap_above_envelope_m": float(np.max(hi, initial=0.0)),
        "negative_speed_mps": float(np.max(neg, initial=0.0)),
    }
    ev = OcpEvaluation(J, P, False, violations={k: max(v, 0.0) for k, v in viol.items()})
    if keep_states:
        ev.x, ev.v, ev.a = X, V, Acc
    return ev


def ocp_objective(u, prob: OcpProblem) -> float:
    """Integrated squared acceleration of the platoon; +inf when vehicles collide."""
    return ocp_evaluate(u, prob, keep_states=False).objective


def adjoint_gradient(u, prob: OcpProblem) -> tuple[float, np.ndarray]:
    """Merit value J + P and its exact gradient w.r.t. the piece controls."""
    u = _check_controls(u, prob)
    out, k_coll = _forward(u, prob, keep_partials=True)
    if out is None:
        raise OcpInfeasible(f"collision at step {k_coll}; gradient undefined")
    X, V, Acc, Ah, Av, Avl = out
    dt, mu, K, n = prob.dt, prob.penalty, prob.K, prob.n
    av = prob.av_index
    lo, hi, neg = _envelope_terms(X, V, prob)
    rlo, rhi, rneg = np.maximum(lo, 0), np.maximum(hi, 0), np.maximum(neg, 0)
    merit = dt * float(np.sum(Acc**2)) + mu * dt * float(np.sum(rlo**2 + rhi**2 + rneg**2))
    # penalty derivatives w.r.t. the states at ticks 1..K
    c = 2.0 * mu * dt
    dPx = np.zeros((K + 1, n))
    dPv = np.zeros((K + 1, n))
    dPx[1:, av] += c * (rlo - rhi)
    dPv[1:, av] += c * (prob.h_min * rlo - prob.h_max * rhi - rneg)
    front = av[av > 0]
    sel = av > 0
    dPx[1:, front - 1] += c * (rhi[:, sel] - rlo[:, sel])
    lam_x = dPx[K].copy()
    lam_v = dPv[K].copy()
    grad_steps = np.empty((K, av.size))
    for k in range(K - 1, -1, -1):
        g_a = dt * lam_v + 2.0 * dt * Acc[k]
        grad_steps[k] = g_a[av]
        gh = g_a  # partials are zero on AV columns
        gAh = gh * Ah[k]
        new_x = lam_x - gAh
        new_x[:-1] += gAh[1:]
        new_v = dt * lam_x + lam_v + gh * Av[k]
        new_v[:-1] += (gh * Avl[k])[1:]
        lam_x = new_x + dPx[k]
        lam_v = new_v + dPv[k]
    grad = np.zeros((prob.n_pieces, av.size))
    np.add.at(grad, prob.piece_of_step(), grad_steps)
    return merit, grad


def merit(u, prob: OcpProblem) -> float:
    ev = ocp_evaluate(u, prob, keep_states=False)
    return ev.merit


def fd_gradient(u, prob: OcpProblem, eps: float = 1e-6) -> np.ndarray:
    """Central finite differences of the merit (independent of the adjoint sweep)."""
    u = _check_controls(u, prob).copy()
    g = np.zeros_like(u)
    for idx in np.ndindex(u.shape):
        up, um = u.copy(), u.copy()
        up[idx] += eps
        um[idx] -= eps
        out_p, _ = _forward(up, prob, False)
        out_m, _ = _forward(um, prob, False)
        g[idx] = (_merit_from(out_p, prob) - _merit_from(out_m, prob)) / (2.0 * eps)
    return g


def _merit_from(out, prob: OcpProblem) -> float:
    if out is None:
        return math.inf
    X, V, Acc = out
    lo, hi, neg = _envelope_terms(X, V, prob)
    return prob.dt * float(np.sum(Acc**2)) + prob.penalty * prob.dt * float(
        np.sum(np.maximum(lo, 0) ** 2 + np.maximum(hi, 0) ** 2 + np.maximum(neg, 0) ** 2))


def gradient_check(u, prob: OcpProblem, eps: float = 1e-6) -> dict:
    """Max |g_adjoint - g_fd| relative to max |g_fd|."""
    _, ga = adjoint_gradient(u, prob)
    gf = fd_gradient(u, prob, eps)
    scale = max(float(np.max(np.abs(gf))), 1e-12)
    return {"n_pieces": prob.n_pieces, "max_abs_error": float(np.max(np.abs(ga - gf))),
            "max_rel_error": float(np.max(np.abs(ga - gf)) / scale), "grad_norm_inf": scale}


def leading_avs(prob: OcpProblem, m: int) -> OcpProblem:
    """The same platoon with only its first ``m`` AVs automated; the others drive as humans."""
    keep = set(prob.av_index[:m].tolist())
    return replace(prob, kinds=tuple("av" if i in keep else "human" for i in range(prob.n)))


def imitation_controls(prob: OcpProblem, j: int, u_front=None) -> np.ndarray:
    """Per-piece mean of the acceleration AV ``j`` would have as a human driver.

    The AVs in front of it apply ``u_front`` (pieces x j); the ones behind
    drive as humans.
    """
    sub = leading_avs(prob, j)
    u_front = np.zeros((prob.n_pieces, 0)) if u_front is None else np.asarray(u_front, dtype=float)
    ev = ocp_evaluate(u_front, sub)
    if ev.collided:
        raise OcpInfeasible("platoon collides before the AV under imitation: " + ev.message, ev.violations)
    piece = prob.piece_of_step()
    counts = np.bincount(piece, minlength=prob.n_pieces)
    sums = np.zeros(prob.n_pieces)
    np.add.at(sums, piece, ev.a[:, prob.av_index[j]])
    return np.clip(sums / counts, prob.u_min, prob.u_max)


def human_imitation_controls(prob: OcpProblem) -> np.ndarray:
    """Imitation controls for every AV, built front to back."""
    u = np.zeros((prob.n_pieces, prob.av_index.size))
    for j in range(prob.av_index.size):
        u[:, j] = imitation_controls(prob, j, u[:, :j])
    return u


@dataclass
class OcpResult:
    u: np.ndarray
    objective: float
    penalty: float
    baseline_objective: float  # all-human platoon
    initial_objective: float  # first evaluated schedule of the final stage problem
    trace: list  # accepted (stage, iteration, merit, objective, penalty) rows
    violations: dict
    evaluation: OcpEvaluation
    stages: list = field(default_factory=list)  # (label, final merit) per stage

    @property
    def reduction(self) -> float:
        """Relative objective reduction vs the all-human platoon."""
        return 1.0 - self.objective / self.baseline_objective


def _descent(u, prob: OcpProblem, cols, iterations: int, gradient: str, trace: list, stage: str,
             step0: float = 0.1, armijo: float = 1e-4, decay: float = 0.9, max_backtracks: int = 40):
    """Diagonally scaled projected gradient descent on the given AV columns.

    Each control moves along -g / rms(g), the gradient divided by a running
    RMS of its own recent values (early pieces have gradients orders of
    magnitude larger than late ones). Steps are projected onto the control
    bounds and accepted only under the Armijo condition, so the accepted
    merit never increases.
    """
    m, g = (adjoint_gradient(u, prob) if gradient == "adjoint" else (merit(u, prob), fd_gradient(u, prob)))
    trace.append((stage, 0, m) + _split(u, prob))
    mask = np.zeros_like(g, dtype=bool)
    mask[:, cols] = True
    sq = g * g
    step = step0
    for it in range(1, iterations + 1):
        sq = decay * sq + (1.0 - decay) * g * g
        d = np.where(mask, -g / np.sqrt(sq + 1e-300), 0.0)
        accepted = False
        for _ in range(max_backtracks):
            trial = np.clip(u + step * d, prob.u_min, prob.u_max)
            moved = u - trial
            if not np.any(moved):
                break
            m_trial = merit(trial, prob)
            if m_trial <= m - armijo * float(np.sum(g * moved)):
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
        u = trial
        m, g = (adjoint_gradient(u, prob) if gradient == "adjoint" else (m_trial, fd_gradient(u, prob)))
        trace.append((stage, it, m) + _split(u, prob))
        step *= 1.5
    return u, m


def _split(u, prob):
    ev = ocp_evaluate(u, prob, keep_states=False)
    return (ev.objective, ev.penalty)


def ocp_optimize(prob: OcpProblem, iterations: int = 40, init: str = "human", gradient: str = "adjoint",
                 sequential: bool = True, joint_iterations: int | None = None, u0=None) -> OcpResult:
    """Minimize J + P over piecewise-constant AV accelerations.

    With several AVs and ``sequential`` set, AVs are switched on one at a
    time from front to back: stage j optimizes AV j (``iterations`` steps)
    while the AVs behind it still drive as humans. A final joint stage
    (``joint_iterations``, default ``iterations``) refines all AVs together.
    ``init`` is "human" (imitate the human acceleration, piece by piece) or
    "zero" (coasting). Within each stage the accepted merit never increases.
    """
    base = ocp_evaluate(np.zeros((prob.n_pieces, 0)), prob.all_human(), keep_states=False)
    if base.collided:
        raise OcpInfeasible("the all-human baseline collides: " + base.message)
    if gradient not in ("adjoint", "fd"):
        raise ValueError(f"unknown gradient {gradient!r}")
    if init not in ("human", "zero"):
        raise ValueError(f"unknown init {init!r}")
    n_av = prob.av_index.size
    trace: list = []
    stages: list = []
    if u0 is not None:
        u = np.clip(_check_controls(u0, prob), prob.u_min, prob.u_max)
    else:
        u = np.zeros((prob.n_pieces, n_av))
    staged = sequential and n_av > 1 and u0 is None
    if staged:
        for j in range(n_av):
            sub = leading_avs(prob, j + 1)
            if init == "human":
                u[:, j] = imitation_controls(prob, j, u[:, :j])
            _require_finite(u[:, :j + 1], sub, f"av{j} start")
            u[:, :j + 1], m = _descent(u[:, :j + 1].copy(), sub, [j], iterations, gradient, trace, f"av{j}")
            stages.append((f"av{j}", m))
    elif u0 is None and init == "human" and n_av:
        u = human_imitation_controls(prob)
    start = _require_finite(u, prob, "initial guess")
    n_joint = iterations if (joint_iterations is None or not staged) else joint_iterations
    label = "joint" if staged else "all"
    if n_av:
        u, m = _descent(u, prob, list(range(n_av)), n_joint, gradient, trace, label)
        stages.append((label, m))
    ev = ocp_evaluate(u, prob)
    return OcpResult(u, ev.objective, ev.penalty, base.objective, start.objective, trace, ev.violations,
                     ev, stages)


def _require_finite(u, prob, what):
    ev = ocp_evaluate(u, prob, keep_states=False)
    if ev.collided:
        raise OcpInfeasible(f"{what} collides: {ev.message}", ev.violations)
    return ev


def platoon_fuel(ev: OcpEvaluation, prob: OcpProblem, model: EnergyModel | None = None) -> float:
    """Energy-model fuel [g] of the whole platoon for an evaluated schedule."""
    model = model or default_model()
    v = np.maximum(ev.v[:-1], 0.0)
    return float(np.sum(fuel_rate(v, ev.a, 0.0, model)) * prob.dt)


def write_schedule_csv(path, res: OcpResult, prob: OcpProblem):
    starts = prob.piece_starts()
    av = prob.av_index
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["piece", "t_start"] + [f"u_vehicle{i}" for i in av])
        for j in range(prob.n_pieces):
            w.writerow([j, repr(float(starts[j]))] + [repr(float(x)) for x in res.u[j]])


def write_trace_csv(path, res: OcpResult):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["stage", "iteration", "merit", "objective", "penalty"])
        for row in res.trace:
            w.writerow([row[0], row[1]] + [repr(float(x)) for x in row[2:]])
