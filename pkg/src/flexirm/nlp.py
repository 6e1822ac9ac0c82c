"""Augmented-Lagrangian NLP solver with a quasi-Newton inner loop.

Problems are duck-typed. A problem provides

* ``n`` and ``objective(z)``;
* either ``residuals(z) -> (r, J)`` with ``objective = ||r||^2`` (the inner
  loop then uses the Gauss-Newton matrix ``2 J^T J`` as Hessian
  approximation) or ``gradient(z)`` (L-BFGS);
* optionally ``eq(z) -> (h, Jh)`` and ``ineq(z) -> (g, Jg)`` for nonlinear
  ``h = 0`` and ``g <= 0`` rows, handled by the augmented Lagrangian;
* optionally ``linear_ineq = (A, b)`` for rows ``A z <= b`` that are kept
  satisfied at every iterate by an active-set method.

:class:`FunctionNLP` wraps plain callables and differentiates them with
:mod:`flexirm.autodiff`.
"""

import json
import logging
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
import scipy.linalg

from . import autodiff as ad

logger = logging.getLogger(__name__)

ARMIJO = 1e-4
BACKTRACK = 0.5
MAX_BACKTRACKS = 20
LBFGS_MEMORY = 10


class BadInitialPointError(ValueError):
    pass


class Status(str, Enum):
    CONVERGED = "converged"
    MAX_ITER = "max-iter"
    INFEASIBLE = "infeasible-constraints"


@dataclass
class SolverOptions:
    rel_tol: float = 1e-8
    max_outer: int = 50
    max_inner: int = 500
    initial_penalty: float = 10.0
    penalty_growth: float = 10.0
    constraint_tol: float = 1e-8
    log_path: str = None
    hessian: str = "auto"  # "auto", "gauss-newton" or "lbfgs"
    linear_rows: str = "barrier"  # "barrier" then active set, or "active-set" only

    def __post_init__(self):
        for name in ("rel_tol", "max_outer", "max_inner", "initial_penalty",
                     "constraint_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not self.penalty_growth > 1:
            raise ValueError("penalty_growth must exceed 1")
        if self.linear_rows not in ("barrier", "active-set"):
            raise ValueError("linear_rows must be 'barrier' or 'active-set'")


@dataclass
class NlpSolution:
    z: np.ndarray
    status: Status
    iterations: int
    kkt_residual: float
    objective: float
    violation: float
    mult_eq: np.ndarray = field(default_factory=lambda: np.zeros(0))
    mult_ineq: np.ndarray = field(default_factory=lambda: np.zeros(0))
    mult_linear: np.ndarray = field(default_factory=lambda: np.zeros(0))
    outer_iterations: int = 0
    history: list = field(default_factory=list)

    @property
    def converged(self):
        return self.status == Status.CONVERGED


class FunctionNLP:
    """NLP built from plain callables ``f(z)``, ``eq(z)``, ``ineq(z)``."""

    def __init__(self, objective, n, eq=None, ineq=None, linear_ineq=None):
        self._f = objective
        self.n = n
        self._eq = eq
        self._ineq = ineq
        self.linear_ineq = linear_ineq

    def objective(self, z):
        return float(ad.value_of(self._f(z)))

    def gradient(self, z):
        return ad.gradient(self._f, z)

    def _rows(self, fn, z):
        if fn is None:
            return np.zeros(0), np.zeros((0, self.n))
        return ad.value_and_jacobian(fn, z)

    def eq(self, z):
        return self._rows(self._eq, z)

    def ineq(self, z):
        return self._rows(self._ineq, z)


# --------------------------------------------------------------------------
# augmented Lagrangian merit

class _Merit:
    def __init__(self, nlp, lam_e, lam_i, rho, hessian):
        self.nlp = nlp
        self.lam_e = lam_e
        self.lam_i = lam_i
        self.rho = rho
        self.gauss_newton = hessian == "gauss-newton"

    def value(self, z):
        f = self.nlp.objective(z)
        return f + self._penalty(z)[0], f

    def _penalty(self, z, jac=False):
        rho = self.rho
        total = 0.0
        grad = np.zeros(len(z)) if jac else None
        hess_rows = []
        h, Jh = _call(self.nlp, "eq", z, len(z))
        if len(h):
            total += self.lam_e @ h + 0.5 * rho * h @ h
            if jac:
                grad += Jh.T @ (self.lam_e + rho * h)
                hess_rows.append(Jh)
        g, Jg = _call(self.nlp, "ineq", z, len(z))
        if len(g):
            s = np.maximum(0.0, self.lam_i + rho * g)
            total += (s @ s - self.lam_i @ self.lam_i) / (2.0 * rho)
            if jac:
                grad += Jg.T @ s
                hess_rows.append(Jg[s > 0])
        return total, grad, hess_rows

    def full(self, z):
        """Merit value, objective value, gradient, Hessian approximation."""
        if self.gauss_newton:
            r, J = self.nlp.residuals(z)
            self.last_rj = (r, J)
            f = float(r @ r)
            grad = 2.0 * (J.T @ r)
            H = 2.0 * (J.T @ J)
        else:
            f = self.nlp.objective(z)
            grad = np.asarray(self.nlp.gradient(z), dtype=float)
            H = None
        pen, pgrad, rows = self._penalty(z, jac=True)
        grad = grad + pgrad
        C = np.vstack(rows) if rows else np.zeros((0, len(z)))
        return f + pen, f, grad, H, C


def _call(nlp, name, z, n):
    fn = getattr(nlp, name, None)
    if fn is None:
        return np.zeros(0), np.zeros((0, n))
    v, J = fn(z)
    return np.atleast_1d(np.asarray(v, dtype=float)), np.asarray(J, dtype=float).reshape(-1, n)


def _violation(nlp, z):
    n = len(z)
    h, _ = _call(nlp, "eq", z, n)
    g, _ = _call(nlp, "ineq", z, n)
    v = 0.0
    if len(h):
        v = max(v, float(np.max(np.abs(h))))
    if len(g):
        v = max(v, float(np.max(g, initial=0.0)))
    lin = getattr(nlp, "linear_ineq", None)
    if lin is not None and len(lin[1]):
        v = max(v, float(np.max(lin[0] @ z - lin[1], initial=0.0)))
    return v


# --------------------------------------------------------------------------
# L-BFGS matrix in compact form

class _LBFGS:
    def __init__(self, m=LBFGS_MEMORY):
        self.m = m
        self.S = []
        self.Y = []

    def reset(self):
        self.S.clear()
        self.Y.clear()

    def update(self, s, y):
        if s @ y <= 1e-12 * np.sqrt((s @ s) * (y @ y)):
            return
        self.S.append(s)
        self.Y.append(y)
        if len(self.S) > self.m:
            self.S.pop(0)
            self.Y.pop(0)

    def matrix(self, n):
        if not self.S:
            return np.eye(n)
        S = np.array(self.S).T
        Y = np.array(self.Y).T
        sigma = (Y[:, -1] @ Y[:, -1]) / (S[:, -1] @ Y[:, -1])
        SY = S.T @ Y
        L = np.tril(SY, -1)
        Dg = np.diag(np.diag(SY))
        Wm = np.hstack([sigma * S, Y])
        M = np.block([[sigma * S.T @ S, L], [L.T, -Dg]])
        return sigma * np.eye(n) - Wm @ np.linalg.solve(M, Wm.T)


# --------------------------------------------------------------------------
# active set for linear rows

class _LinearRows:
    def __init__(self, lin, n):
        if lin is None or len(lin[1]) == 0:
            self.A = np.zeros((0, n))
            self.b = np.zeros(0)
        else:
            self.A = np.asarray(lin[0], dtype=float)
            self.b = np.asarray(lin[1], dtype=float)
        self.n = n
        cols = np.flatnonzero(np.any(self.A != 0.0, axis=0))
        self.cols = cols
        self.scale = max(1.0, float(np.max(np.abs(self.b), initial=0.0)))

    def __len__(self):
        return len(self.b)

    def active(self, z):
        if not len(self):
            return np.zeros(0, dtype=bool)
        return self.A @ z - self.b >= -1e-12 * self.scale

    def extend(self, W, cand):
        """Add rows of ``cand`` to ``W`` while the set stays linearly independent."""
        new = np.flatnonzero(cand & ~W)
        if not len(new):
            return W
        W = W.copy()
        A = self.A[:, self.cols]
        Q = []
        if np.any(W):
            q, r = np.linalg.qr(A[W].T)
            Q = list(q[:, np.abs(np.diag(r)) > 1e-10].T)
        for j in new:
            a = A[j]
            norm = np.linalg.norm(a)
            for q in Q:
                a = a - (q @ a) * q
            if np.linalg.norm(a) > 1e-8 * norm:
                Q.append(a / np.linalg.norm(a))
                W[j] = True
        return W

    def nullspace(self, W):
        """Basis (over all columns) of directions keeping rows ``W`` fixed."""
        n = self.n
        free = np.ones(n, dtype=bool)
        free[self.cols] = False
        Aw = self.A[W][:, self.cols]
        if Aw.shape[0] == 0:
            return None
        # pivoted QR of Aw^T; trailing columns of Q span the null space
        Q, R, _ = scipy.linalg.qr(Aw.T, pivoting=True)
        d = np.abs(np.diag(R))
        rank = int(np.sum(d > 1e-10 * max(1.0, d[0] if len(d) else 1.0)))
        Zc = Q[:, rank:]
        Z = np.zeros((n, int(free.sum()) + Zc.shape[1]))
        Z[np.flatnonzero(free), np.arange(int(free.sum()))] = 1.0
        Z[np.ix_(self.cols, np.arange(int(free.sum()), Z.shape[1]))] = Zc
        return Z

    def max_step(self, z, p, W):
        if not len(self):
            return np.inf, None
        Ap = self.A @ p
        slack = self.b - self.A @ z
        tol = 1e-11 * np.linalg.norm(self.A, axis=1) * np.linalg.norm(p)
        cand = (~W) & (Ap > tol)
        if not np.any(cand):
            return np.inf, None
        ratios = np.where(cand, np.maximum(slack, 0.0) / np.where(cand, Ap, 1.0), np.inf)
        j = int(np.argmin(ratios))
        return float(ratios[j]), j


def _solve_reduced(H, g, Z, damping):
    Hd = H + np.diag(damping)
    if Z is None:
        A, rhs = Hd, -g
    else:
        A, rhs = Z.T @ Hd @ Z, -(Z.T @ g)
    A = 0.5 * (A + A.T)
    try:
        c, low = scipy.linalg.cho_factor(A, check_finite=False)
        y = scipy.linalg.cho_solve((c, low), rhs, check_finite=False)
    except (np.linalg.LinAlgError, ValueError):
        y = np.linalg.lstsq(A, rhs, rcond=None)[0]
    return y if Z is None else Z @ y


def _direction(Hk, g, rows, W, damping):
    """Equality-constrained step on working set ``W``, releasing wrong-sign rows.

    A released row that the new direction would cross is put back and kept.
    """
    released = np.zeros(len(rows), dtype=bool)
    locked = np.zeros(len(rows), dtype=bool)
    while True:
        Z = rows.nullspace(W) if np.any(W) else None
        p = _solve_reduced(Hk, g, Z, damping)
        if np.any(released):
            Ap = rows.A @ p
            back = released & (Ap > 1e-11 * np.linalg.norm(rows.A, axis=1) * np.linalg.norm(p))
            if np.any(back):
                W = W | back
                locked |= back
                released &= ~back
                continue
        if not np.any(W):
            return p, Z, W
        idx = np.flatnonzero(W)
        lam = np.linalg.lstsq(rows.A[idx].T, -(g + Hk @ p + damping * p), rcond=None)[0]
        lam[locked[idx]] = np.inf
        k = int(np.argmin(lam))
        if lam[k] >= -1e-10 * max(1.0, np.abs(lam[np.isfinite(lam)]).max(initial=0.0)):
            return p, Z, W
        W = W.copy()
        W[idx[k]] = False
        released[idx[k]] = True


def _secant_update(S, s, y, y_sharp):
    """In-place structured secant update of the second-order term ``S``."""
    ys = y @ s
    if ys <= 1e-12 * np.linalg.norm(y) * np.linalg.norm(s):
        return
    sSs = s @ S @ s
    if sSs != 0.0:
        S *= min(1.0, abs(s @ y_sharp) / abs(sSs))
    w = y_sharp - S @ s
    S += (np.outer(w, y) + np.outer(y, w)) / ys - (w @ s) * np.outer(y, y) / ys ** 2


class _Barrier:
    """Log barrier ``-mu * sum(log(b - A z))`` over the rows in ``mask``."""

    FRACTION = 0.995

    def __init__(self, rows, mask, mu):
        self.A = rows.A[mask]
        self.b = rows.b[mask]
        self.mu = mu

    def slack(self, z):
        return self.b - self.A @ z

    def value(self, z):
        s = self.slack(z)
        if np.any(s <= 0.0):
            return np.inf
        return -self.mu * float(np.sum(np.log(s)))

    def grad_hess(self, z):
        inv = 1.0 / self.slack(z)
        return self.mu * (self.A.T @ inv), self.mu * (self.A.T * inv ** 2) @ self.A

    def max_step(self, z, p):
        Ap = self.A @ p
        s = self.slack(z)
        up = Ap > 0
        if not np.any(up):
            return np.inf
        return self.FRACTION * float(np.min(s[up] / Ap[up]))


def _inner(merit, z, rows, opts, hessian, log, counter, barrier=None, fixed=None):
    """Minimise the merit over points satisfying ``rows``; returns (z, info).

    Gauss-Newton mode damps the step Levenberg-Marquardt style, adapting
    the damping from the ratio of actual to predicted decrease; both modes
    finish with an Armijo backtracking line search.

    For residuals that stay large at the solution the Gauss-Newton matrix
    misses the ``sum r_i H_i`` term, so a structured secant estimate ``S``
    of it is kept (Dennis, Gay and Welsch) and added whenever it predicted
    the previous step better than plain Gauss-Newton did.

    With ``barrier`` the linear rows outside ``fixed`` are handled by the
    log barrier instead of the active set, and the solve stops once the
    model promises less than ``barrier.mu``.
    """
    n = len(z)
    lbfgs = _LBFGS() if hessian == "lbfgs" else None
    mu = 0.0
    restarted = False

    def evaluate(z):
        phi, f, g, H, C = merit.full(z)
        if barrier is None:
            return phi, f, g, H, C, None
        bg, bh = barrier.grad_hess(z)
        return phi + barrier.value(z), f, g + bg, H, C, bh

    def value(z):
        phi, _ = merit.value(z)
        return phi + barrier.value(z) if barrier is not None else phi

    phi, f, g, H, C, Hb = evaluate(z)
    S = np.zeros((n, n)) if lbfgs is None else None
    use_s = False
    stalled = False
    empty = np.zeros(len(rows), dtype=bool)
    if barrier is None:
        W = rows.extend(empty, rows.active(z))
    else:
        W = rows.extend(empty, fixed if fixed is not None else empty)
    kkt = np.inf
    it = 0
    status = Status.MAX_ITER
    stalls = 0
    for it in range(1, opts.max_inner + 1):
        counter[0] += 1
        if lbfgs is not None:
            H = lbfgs.matrix(n)
        Hk = H + merit.rho * (C.T @ C) if len(C) else H
        if Hb is not None:
            Hk = Hk + Hb
        H_gn = Hk
        if use_s:
            Hk = Hk + S
        diag = np.abs(np.diag(Hk))
        damping = mu * np.maximum(diag, 1e-12 * max(1.0, diag.max(initial=0.0)))
        if barrier is None:
            p, Z, W = _direction(Hk, g, rows, W, damping)
        else:
            Z = rows.nullspace(W) if np.any(W) else None
            p = _solve_reduced(Hk, g, Z, damping)
        gz = g if Z is None else Z.T @ g
        kkt = float(np.max(np.abs(gz), initial=0.0))
        small_kkt = kkt <= opts.rel_tol * max(1.0, abs(f))
        slope = g @ p
        if not slope < 0:
            if small_kkt:
                status = Status.CONVERGED
                break
            p = -(g if Z is None else Z @ gz)
            slope = g @ p
        pred = -(slope + 0.5 * p @ Hk @ p)
        if barrier is not None:
            if pred <= max(barrier.mu, opts.rel_tol * abs(phi)):
                status = Status.CONVERGED
                break
        elif small_kkt and pred <= opts.rel_tol * abs(phi):
            # stationary, and the model sees no relative gain worth taking
            status = Status.CONVERGED
            break
        if barrier is None:
            a_max, block = rows.max_step(z, p, W)
        else:
            a_max, block = barrier.max_step(z, p), None
        alpha = min(1.0, a_max)
        accepted = False
        ratio = None
        for _ in range(MAX_BACKTRACKS):
            z_new = z + alpha * p
            phi_new = value(z_new)
            if ratio is None:
                ratio = (phi - phi_new) / pred if pred > 0 else 0.0
            if np.isfinite(phi_new) and phi_new <= phi + ARMIJO * alpha * slope:
                accepted = True
                break
            alpha *= BACKTRACK
        if lbfgs is None and alpha > 0:
            if not np.isfinite(ratio) or ratio < 0.25:
                mu = max(4.0 * mu, 1e-6)
            elif ratio > 0.75:
                mu = 0.0 if mu < 1e-9 else mu / 4.0
        if not accepted:
            if small_kkt or np.max(np.abs(p)) <= 1e-14 * (1.0 + np.max(np.abs(z))):
                status = Status.CONVERGED
                break
            stalls += 1
            if lbfgs is not None and not restarted:
                lbfgs.reset()
                restarted = True
                continue
            if lbfgs is None and mu < 1e10 and stalls < 20:
                continue
            status = Status.MAX_ITER
            stalled = True
            logger.info("inner line search stalled at iteration %d", it)
            break
        stalls = 0
        if block is not None and alpha == a_max:
            W = W.copy()
            W[block] = True
        z_old, g_old = z, g
        z = z_new
        if barrier is None:
            W = rows.extend(W, rows.active(z))
        phi_old = phi
        if S is not None:
            r_old, J_old = merit.last_rj
        phi, f, g, H, C, Hb = evaluate(z)
        if lbfgs is not None:
            lbfgs.update(z - z_old, g - g_old)
        else:
            step = z - z_old
            actual = phi_old - phi
            q_gn = -(g_old @ step + 0.5 * step @ H_gn @ step)
            q_s = q_gn - 0.5 * step @ S @ step
            use_s = abs(q_s - actual) < abs(q_gn - actual)
            r_new, J_new = merit.last_rj
            _secant_update(S, step, 2.0 * (J_new.T @ r_new - J_old.T @ r_old),
                           2.0 * ((J_new - J_old).T @ r_new))
        if log is not None:
            rec = {"iteration": counter[0], "objective": f, "merit": phi,
                   "step": alpha, "damping": mu, "active": int(W.sum())}
            if barrier is not None:
                rec["barrier"] = barrier.mu
            log.write(json.dumps(rec) + "\n")
        # merit flat to machine precision after a full step
        if abs(phi_old - phi) <= 1e-15 * max(abs(phi), 1e-300) and alpha == 1.0:
            Zw = rows.nullspace(W) if np.any(W) else None
            kkt = float(np.max(np.abs(g if Zw is None else Zw.T @ g), initial=0.0))
            status = Status.CONVERGED
            break
    return z, dict(status=status, kkt=kkt, inner=it, W=W, stalled=stalled)


BARRIER_START = 0.1
BARRIER_SHRINK = 0.1
BARRIER_STAGES = 12


def _barrier_phase(nlp, z, rows, opts, hessian, log, counter, merit):
    """Approach the linear rows along a barrier path before the active set.

    Rows already tight at ``z`` (zero-width mesh bounds, say) stay in the
    working set. The barrier weight starts at a fraction of the merit per
    free row and shrinks geometrically.
    """
    fixed = rows.active(z)
    free = ~fixed
    m = int(free.sum())
    if m == 0:
        return z
    phi0, _ = merit.value(z)
    mu = BARRIER_START * max(abs(phi0), 1e-300) / m
    for _ in range(BARRIER_STAGES):
        z, info = _inner(merit, z, rows, opts, hessian, log, counter,
                         barrier=_Barrier(rows, free, mu), fixed=fixed)
        if hasattr(nlp, "project"):
            z = nlp.project(z)
        phi, _ = merit.value(z)
        logger.debug("barrier mu=%.2e merit=%.3e inner=%d", mu, phi, info["inner"])
        mu *= BARRIER_SHRINK
        if mu * m <= opts.rel_tol * abs(phi):
            break
    return z


def solve(nlp, z0, opts=None):
    """Minimise ``nlp`` from ``z0``.

    Returns the final iterate, which is the best available when the solver
    does not converge.
    """
    opts = opts or SolverOptions()
    z = np.array(z0, dtype=float)
    n = len(z)
    if z.shape != (nlp.n,):
        raise ValueError(f"z0 has length {len(z)}, layout needs {nlp.n}")
    if not np.isfinite(nlp.objective(z)):
        raise BadInitialPointError("objective is not finite at the initial point")
    hessian = opts.hessian
    if hessian == "auto":
        hessian = "gauss-newton" if hasattr(nlp, "residuals") else "lbfgs"
    rows = _LinearRows(getattr(nlp, "linear_ineq", None), n)
    if len(rows) and np.any(rows.A @ z - rows.b > opts.constraint_tol):
        raise BadInitialPointError("initial point violates the linear rows")
    if hasattr(nlp, "project"):
        z = nlp.project(z)

    h0, _ = _call(nlp, "eq", z, n)
    g0, _ = _call(nlp, "ineq", z, n)
    lam_e = np.zeros(len(h0))
    lam_i = np.zeros(len(g0))
    rho = opts.initial_penalty
    has_nl = bool(len(h0) or len(g0))
    log = open(opts.log_path, "w") if opts.log_path else None
    counter = [0]
    history = []
    info = {}
    best_viol = np.inf
    try:
        if opts.linear_rows == "barrier" and len(rows):
            z = _barrier_phase(nlp, z, rows, opts, hessian, log, counter,
                               _Merit(nlp, lam_e, lam_i, rho, hessian))
        for outer in range(1, opts.max_outer + 1):
            merit = _Merit(nlp, lam_e, lam_i, rho, hessian)
            z, info = _inner(merit, z, rows, opts, hessian, log, counter)
            if hasattr(nlp, "project"):
                z = nlp.project(z)
            viol = _violation(nlp, z)
            f = nlp.objective(z)
            history.append(dict(outer=outer, objective=f, violation=viol,
                                penalty=rho, inner=info["inner"]))
            logger.debug("outer %d: f=%.3e viol=%.3e rho=%.1e", outer, f, viol, rho)
            if not has_nl:
                # nothing for the multipliers to do; continue only if unfinished
                if info["status"] == Status.CONVERGED or info["stalled"]:
                    break
                continue
            h, _ = _call(nlp, "eq", z, n)
            g, _ = _call(nlp, "ineq", z, n)
            lam_e = lam_e + rho * h
            lam_i = np.maximum(0.0, lam_i + rho * g)
            # the inner gradient is the Lagrangian gradient at the updated
            # multipliers, so a converged inner solve is a KKT point
            if viol <= opts.constraint_tol and info["status"] == Status.CONVERGED:
                break
            if viol > 0.25 * best_viol:
                rho *= opts.penalty_growth
            best_viol = min(best_viol, viol)
    finally:
        if log is not None:
            log.close()

    f = nlp.objective(z)
    viol = _violation(nlp, z)
    status = info.get("status", Status.MAX_ITER)
    if status == Status.CONVERGED and viol > opts.constraint_tol:
        status = Status.INFEASIBLE
    W = info.get("W", np.zeros(0, dtype=bool))
    mult_lin = np.zeros(len(rows))
    return NlpSolution(z=z, status=status, iterations=counter[0],
                       kkt_residual=info.get("kkt", np.inf), objective=f,
                       violation=viol, mult_eq=lam_e, mult_ineq=lam_i,
                       mult_linear=mult_lin, outer_iterations=len(history),
                       history=history)
