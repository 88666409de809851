"""Dense convex QP solver (Goldfarb-Idnani dual active-set method).

Solves  min 1/2 x'Gx + a'x  s.t.  C[i] x >= b[i],  with the first ``meq``
rows of C holding as equalities. G must be symmetric positive definite.
The method starts from the unconstrained minimum and adds the most
violated constraint at a time while keeping dual feasibility, so it needs
no feasible starting point. Projection operators are rebuilt from the
current active set each step, which is cheap at the sizes used here.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class QpInfeasible(ValueError):
    """The constraint set is empty (detected by an unbounded dual step)."""


@dataclass
class QpResult:
    x: np.ndarray
    objective: float
    active: list
    multipliers: np.ndarray  # one per constraint row, zero when inactive
    iterations: int


def _operators(Ginv, N):
    if N.shape[1] == 0:
        return Ginv, np.zeros((0, Ginv.shape[0]))
    GN = Ginv @ N
    Nstar = np.linalg.solve(N.T @ GN, GN.T)
    return Ginv - GN @ Nstar, Nstar


def solve_qp(G, a, C=None, b=None, meq: int = 0, tol: float = 1e-10, max_iter: int | None = None) -> QpResult:
    G = np.asarray(G, dtype=float)
    a = np.asarray(a, dtype=float)
    n = a.size
    C = np.zeros((0, n)) if C is None else np.atleast_2d(np.asarray(C, dtype=float))
    b = np.zeros(0) if b is None else np.asarray(b, dtype=float)
    m = C.shape[0]
    if C.shape[1] != n or b.size != m:
        raise ValueError("constraint shapes do not match the variable count")
    L = np.linalg.cholesky(G)  # raises LinAlgError unless G is positive definite
    Linv = np.linalg.inv(L)
    Ginv = Linv.T @ Linv
    x = -Ginv @ a
    active: list = []  # constraint indices
    signs: list = []  # +1, or -1 for equalities entered from the other side
    u = np.zeros(0)
    scale = 1.0 + np.abs(b)
    max_iter = max_iter or 50 * (m + n) + 100
    it = 0

    def row(j, sgn):
        return sgn * C[j], sgn * b[j]

    pending_eq = list(range(meq))
    while True:
        it += 1
        if it > max_iter:
            raise RuntimeError("QP solver did not converge")
        # pick the constraint to add
        if pending_eq:
            p = pending_eq.pop(0)
            sgn = -1.0 if C[p] @ x - b[p] > 0 else 1.0
        else:
            s = C @ x - b
            s[active] = np.inf
            s[:meq] = np.inf
            viol = s / scale
            p = int(np.argmin(viol)) if m else 0
            if m == 0 or viol[p] >= -tol:
                break
            sgn = 1.0
        n_p, b_p = row(p, sgn)
        u_p = 0.0
        while True:
            N = np.array([row(j, sg)[0] for j, sg in zip(active, signs)]).T.reshape(n, len(active))
            H, Nstar = _operators(Ginv, N)
            z = H @ n_p
            r = Nstar @ n_p
            t1, k = np.inf, -1
            for j, idx in enumerate(active):
                if idx >= meq and r[j] > 0:
                    ratio = u[j] / r[j]
                    if ratio < t1:
                        t1, k = ratio, j
            zn = float(z @ n_p)
            slack = b_p - n_p @ x
            t2 = slack / zn if zn > 1e-14 * (1.0 + n_p @ n_p) else np.inf
            if p < meq and slack <= 0:
                t2 = 0.0
            t = min(t1, t2)
            if not np.isfinite(t):
                raise QpInfeasible(f"constraint {p} cannot be satisfied with the active set {active}")
            if np.isinf(t2):
                u = u - t * r
                u_p += t
                del active[k], signs[k]
                u = np.delete(u, k)
                continue
            x = x + t * z
            u = u - t * r
            u_p += t
            if t2 <= t1:
                active.append(p)
                signs.append(sgn)
                u = np.append(u, u_p)
                break
            del active[k], signs[k]
            u = np.delete(u, k)
    mult = np.zeros(m)
    for j, idx in enumerate(active):
        mult[idx] = signs[j] * u[j]
    obj = float(0.5 * x @ G @ x + a @ x)
    return QpResult(x, obj, sorted(active), mult, it)


def kkt_residual(res: QpResult, G, a, C, b, meq: int = 0) -> dict:
    """Stationarity, primal and complementarity residuals of a solution."""
    G, a, C, b = (np.asarray(z, dtype=float) for z in (G, a, C, b))
    grad = G @ res.x + a - C.T @ res.multipliers
    s = C @ res.x - b
    primal = np.concatenate((np.abs(s[:meq]), np.maximum(-s[meq:], 0.0)))
    return {
        "stationarity": float(np.max(np.abs(grad))) if grad.size else 0.0,
        "primal": float(np.max(primal)) if primal.size else 0.0,
        "dual": float(np.max(np.maximum(-res.multipliers[meq:], 0.0))) if C.shape[0] > meq else 0.0,
        "complementarity": float(np.max(np.abs(res.multipliers * s))) if s.size else 0.0,
    }
