"""Integrated-residual transcription of a :class:`DynamicsProblem`.

The state of each component is a piecewise polynomial of degree ``a`` on
Lobatto supports; the value at a mesh node is one shared decision variable,
so the state is continuous by construction. Controls are piecewise
polynomials of degree ``b`` owned by each interval and may jump at nodes.
The objective is the Gauss-Legendre approximation of the integrated squared
dynamics residual. With ``flexible=True`` the interior mesh nodes are also
decision variables, each interval length kept within ``(1 +- phi)`` of the
uniform length.
"""

import csv
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import autodiff as ad
from .basis import basis_deriv_matrix, basis_matrix, lobatto_points, make_supports
from .problem import BoundaryValues, eval_rows
from .quadrature import gauss_legendre


@dataclass(frozen=True)
class MeshConfig:
    n_intervals: int
    phi: float = 0.5
    deg_state: int = 3
    deg_control: int = 0
    quad_order: Optional[int] = None
    flexible: bool = False

    def __post_init__(self):
        if self.n_intervals < 1:
            raise ValueError("n_intervals must be >= 1")
        if not 0.0 <= self.phi < 1.0:
            raise ValueError("phi must lie in [0, 1)")
        if self.deg_state < 1 or self.deg_control < 0:
            raise ValueError("need deg_state >= 1 and deg_control >= 0")
        if self.quad_order is None:
            object.__setattr__(self, "quad_order", self.deg_state + 3)
        if self.quad_order < 1:
            raise ValueError("quad_order must be >= 1")


def uniform_mesh(t0, tf, n):
    """Equidistant nodes ``t0 + i (tf - t0) / n`` for ``i = 0..n``."""
    if n < 1 or not tf > t0:
        raise ValueError("need n >= 1 and tf > t0")
    t = t0 + np.arange(n + 1) * ((tf - t0) / n)
    t[-1] = tf
    return t


def _ref_supports(degree):
    return make_supports(-1.0, 1.0, degree)


@dataclass(frozen=True)
class DecisionLayout:
    """Where each block lives in the flat decision vector.

    Order: free state nodal values (component-major, then time), control
    coefficients (component, interval, support), interior mesh nodes.
    """

    n_x: int
    n_u: int
    n_intervals: int
    deg_state: int
    deg_control: int
    flexible: bool
    state_index: np.ndarray  # (n_x, N*a + 1), -1 where pinned
    state_fixed: np.ndarray  # pinned values, 0 elsewhere
    n_state: int
    control_offset: int
    n_control: int
    mesh_offset: int
    n_mesh: int
    size: int

    @classmethod
    def create(cls, n_x, n_u, bv, mesh):
        N, a, b = mesh.n_intervals, mesh.deg_state, mesh.deg_control
        cols = N * a + 1
        pinned = np.zeros((n_x, cols), dtype=bool)
        fixed = np.zeros((n_x, cols))
        bv = bv or BoundaryValues()
        p0, v0 = bv.mask(0, n_x)
        pf, vf = bv.mask(1, n_x)
        pinned[:, 0], fixed[:, 0] = p0, v0
        pinned[:, -1], fixed[:, -1] = pf, vf
        index = np.full((n_x, cols), -1)
        n_state = int((~pinned).sum())
        index[~pinned] = np.arange(n_state)
        n_control = n_u * N * (b + 1)
        n_mesh = N - 1 if mesh.flexible else 0
        size = n_state + n_control + n_mesh
        index.flags.writeable = False
        fixed.flags.writeable = False
        return cls(n_x, n_u, N, a, b, mesh.flexible, index, fixed, n_state,
                   n_state, n_control, n_state + n_control, n_mesh, size)

    @property
    def n_mesh_rows(self):
        """Two-sided interval-length rows, one per interval when flexible."""
        return self.n_intervals if self.flexible else 0

    def unpack(self, z):
        z = np.asarray(z, dtype=float)
        S = self.state_fixed.copy()
        free = self.state_index >= 0
        S[free] = z[self.state_index[free]]
        C = z[self.control_offset:self.control_offset + self.n_control].reshape(
            self.n_u, self.n_intervals, self.deg_control + 1)
        tm = z[self.mesh_offset:self.mesh_offset + self.n_mesh]
        return S, C, tm

    def pack(self, S, C, tm=()):
        z = np.zeros(self.size)
        free = self.state_index >= 0
        z[self.state_index[free]] = np.asarray(S, dtype=float)[free]
        z[self.control_offset:self.control_offset + self.n_control] = np.ravel(C)
        z[self.mesh_offset:self.mesh_offset + self.n_mesh] = tm
        return z

    def local_to_global(self):
        """``(N, m)`` map from per-interval local slots to ``z`` indices."""
        N, a, b = self.n_intervals, self.deg_state, self.deg_control
        m = self.n_x * (a + 1) + self.n_u * (b + 1) + (2 if self.flexible else 0)
        out = np.full((N, m), -1)
        for i in range(N):
            for d in range(self.n_x):
                out[i, d * (a + 1):(d + 1) * (a + 1)] = \
                    self.state_index[d, i * a:i * a + a + 1]
            off = self.n_x * (a + 1)
            for e in range(self.n_u):
                start = self.control_offset + (e * N + i) * (b + 1)
                out[i, off + e * (b + 1):off + (e + 1) * (b + 1)] = \
                    np.arange(start, start + b + 1)
            if self.flexible:
                out[i, m - 2] = self.mesh_offset + i - 1 if i >= 1 else -1
                out[i, m - 1] = self.mesh_offset + i if i <= N - 2 else -1
        return out


class _PointSet:
    """Reference evaluation points with precomputed basis matrices."""

    def __init__(self, ref_points, deg_state, deg_control):
        self.ref = np.asarray(ref_points, dtype=float)
        sx = _ref_supports(deg_state)
        su = _ref_supports(deg_control)
        self.Lx = basis_matrix(sx, self.ref)
        self.Dx = basis_deriv_matrix(sx, self.ref)
        self.Lu = basis_matrix(su, self.ref)
        self.frac = 0.5 * (self.ref + 1.0)


class TranscribedNLP:
    """Finite NLP for a problem on a mesh, in the form :mod:`flexirm.nlp` solves."""

    def __init__(self, problem, bv, mesh):
        self.problem = problem
        self.bv = bv or BoundaryValues()
        self.mesh = mesh
        self.layout = DecisionLayout.create(problem.n_x, problem.n_u, self.bv, mesh)
        self.n = self.layout.size
        self.h_bar = (problem.tf - problem.t0) / mesh.n_intervals
        self.uniform = uniform_mesh(problem.t0, problem.tf, mesh.n_intervals)
        self._l2g = self.layout.local_to_global()
        self._rules = {}
        a, b = mesh.deg_state, mesh.deg_control
        path_ref = np.union1d(lobatto_points(a), lobatto_points(b))
        # merge near-duplicates so shared supports are evaluated once
        keep = np.concatenate([[True], np.diff(path_ref) > 1e-12])
        self._path_pts = _PointSet(path_ref[keep], a, b)
        self._mesh_A, self._mesh_b = self._mesh_rows()
        self._path_linear, self._path_A, self._path_b = self._split_path_rows()
        A = np.vstack([self._mesh_A, self._path_A])
        b = np.concatenate([self._mesh_b, self._path_b])
        self.linear_ineq = (A, b) if len(b) else None

    # -- geometry ----------------------------------------------------------
    def nodes(self, z):
        if not self.mesh.flexible:
            return self.uniform
        _, _, tm = self.layout.unpack(z)
        return np.concatenate([[self.problem.t0], tm, [self.problem.tf]])

    def _quad(self, order):
        order = int(order)
        if order not in self._rules:
            rule = gauss_legendre(order)
            self._rules[order] = (rule, _PointSet(rule.ref_nodes, self.mesh.deg_state,
                                                  self.mesh.deg_control))
        return self._rules[order]

    def _split_path_rows(self):
        """Find path rows that are affine in ``z``.

        Those rows (box bounds on controls, typically) go to the solver as
        linear rows kept feasible at every iterate; the rest stay nonlinear.
        """
        none = (np.zeros(0, dtype=bool), np.zeros((0, self.n)), np.zeros(0))
        if not self.problem.n_g:
            return none
        rng = np.random.default_rng(12345)
        probes = []
        for _ in range(3):
            z = rng.standard_normal(self.n)
            if self.mesh.flexible:
                jitter = 0.25 * self.mesh.phi * self.h_bar * rng.uniform(-1, 1, self.layout.n_mesh)
                z[self.layout.mesh_offset:] = self.uniform[1:-1] + jitter
            probes.append((z,) + self.path(z))
        z1, g1, J1 = probes[0]
        scale = 1.0 + np.max(np.abs(J1), axis=1)
        linear = np.ones(len(g1), dtype=bool)
        for z2, g2, J2 in probes[1:]:
            linear &= np.max(np.abs(J2 - J1), axis=1) <= 1e-13 * scale
            pred = g1 + J1 @ (z2 - z1)
            linear &= np.abs(g2 - pred) <= 1e-12 * (1.0 + np.abs(g2)) * scale
        # rows touching the mesh stay nonlinear: project() may move the mesh
        linear &= ~np.any(J1[:, self.layout.mesh_offset:] != 0.0, axis=1)
        if not np.any(linear):
            return none
        return linear, J1[linear], J1[linear] @ z1 - g1[linear]

    def _mesh_rows(self):
        N = self.mesh.n_intervals
        if not self.mesh.flexible:
            return np.zeros((0, self.n)), np.zeros(0)
        lay = self.layout
        t0, tf = self.problem.t0, self.problem.tf
        hi = (1.0 + self.mesh.phi) * self.h_bar
        lo = (1.0 - self.mesh.phi) * self.h_bar
        A = np.zeros((2 * N, self.n))
        b = np.zeros(2 * N)
        for i in range(N):
            # d_i = t_{i+1} - t_i, with fixed ends moved to the right-hand side
            const = 0.0
            if i + 1 <= N - 1:
                A[i, lay.mesh_offset + i] += 1.0
            else:
                const += tf
            if i >= 1:
                A[i, lay.mesh_offset + i - 1] -= 1.0
            else:
                const -= t0
            b[i] = hi - const
            A[N + i] = -A[i]
            b[N + i] = -lo + const
        return A, b

    def project(self, z):
        """Map the mesh block onto the interval-length polytope."""
        if not self.mesh.flexible or self.mesh.n_intervals < 2:
            return z
        z = np.array(z, dtype=float)
        t = self.nodes(z)
        d = np.diff(t)
        T = self.problem.tf - self.problem.t0
        lo = (1.0 - self.mesh.phi) * self.h_bar
        hi = (1.0 + self.mesh.phi) * self.h_bar
        if hi - lo <= 0.0:
            d = np.full_like(d, self.h_bar)
        elif np.all(d >= lo) and np.all(d <= hi):
            return z
        else:
            a_lo, a_hi = np.min(d) - hi, np.max(d) - lo
            for _ in range(200):
                lam = 0.5 * (a_lo + a_hi)
                if np.clip(d - lam, lo, hi).sum() > T:
                    a_lo = lam
                else:
                    a_hi = lam
            d = np.clip(d - 0.5 * (a_lo + a_hi), lo, hi)
        tm = self.problem.t0 + np.cumsum(d)[:-1]
        z[self.layout.mesh_offset:] = tm
        return z

    # -- evaluation ----------------------------------------------------------
    def _points(self, z, pts, jac):
        """State, derivative, control and time at ``pts`` in every interval."""
        lay = self.layout
        N, a, b = lay.n_intervals, lay.deg_state, lay.deg_control
        n_x, n_u = lay.n_x, lay.n_u
        S, C, _ = lay.unpack(z)
        t = self.nodes(z)
        h = np.diff(t)
        idx = np.arange(N)[:, None] * a + np.arange(a + 1)[None, :]
        Sl = S[:, idx]  # (n_x, N, a+1)
        X = np.einsum("dij,pj->dip", Sl, pts.Lx)
        Xd0 = np.einsum("dij,pj->dip", Sl, pts.Dx)
        Xd = Xd0 * (2.0 / h)[None, :, None]
        U = np.einsum("eij,pj->eip", C, pts.Lu)
        T = t[:-1, None] + h[:, None] * pts.frac[None, :]
        if not jac:
            return Xd, X, U, T, h
        P = len(pts.ref)
        m = self._l2g.shape[1]
        dX = np.zeros((n_x, N, P, m))
        dXd = np.zeros((n_x, N, P, m))
        for d in range(n_x):
            sl = slice(d * (a + 1), (d + 1) * (a + 1))
            dX[d, :, :, sl] = pts.Lx[None]
            dXd[d, :, :, sl] = pts.Dx[None] * (2.0 / h)[:, None, None]
        dU = np.zeros((n_u, N, P, m))
        off = n_x * (a + 1)
        for e in range(n_u):
            dU[e, :, :, off + e * (b + 1):off + (e + 1) * (b + 1)] = pts.Lu[None]
        dT = np.zeros((N, P, m))
        if lay.flexible:
            dXd[..., m - 2] = Xd / h[None, :, None]
            dXd[..., m - 1] = -Xd / h[None, :, None]
            dT[..., m - 2] = 1.0 - pts.frac[None, :]
            dT[..., m - 1] = pts.frac[None, :]
        return (ad.Dual(Xd, dXd), ad.Dual(X, dX), ad.Dual(U, dU),
                ad.Dual(T, dT), h)

    def _call(self, fn, n_rows, vals):
        Xd, X, U, T, _ = vals
        lay = self.layout
        N = lay.n_intervals
        P = T.shape[-1]
        flat = lambda v, k: v.reshape(k, N * P)  # noqa: E731
        out = eval_rows(fn, flat(Xd, lay.n_x), flat(X, lay.n_x),
                        flat(U, lay.n_u), T.reshape(N * P))
        return out.reshape(n_rows, N, P)

    def _scatter(self, D):
        """Dense global Jacobian from per-interval blocks ``D[i, p, f, m]``."""
        N, P, F, m = D.shape
        J = np.zeros((N * P * F, self.n))
        rows = np.arange(N * P * F).reshape(N, P, F, 1)
        cols = self._l2g[:, None, None, :]
        rows, cols = np.broadcast_arrays(rows, cols)
        mask = cols >= 0
        J[rows[mask], cols[mask]] = D[mask]
        return J

    def residuals(self, z, quad_order=None, jac=True):
        """Weighted residuals ``r`` with ``objective = r @ r`` (and ``dr/dz``).

        Rows are ordered by interval, quadrature point, then equation.
        """
        rule, pts = self._quad(quad_order or self.mesh.quad_order)
        vals = self._points(z, pts, jac)
        h = vals[4]
        Fv = self._call(self.problem.dynamics, self.problem.n_f, vals)
        sw = np.sqrt(0.5 * rule.ref_weights[None, :] * h[:, None])  # (N, Q)
        if not jac:
            return (Fv * sw[None]).transpose(1, 2, 0).ravel()
        r = (Fv.value * sw[None]).transpose(1, 2, 0)
        D = Fv.deriv * sw[None, :, :, None]
        if self.layout.flexible:
            m = D.shape[-1]
            dsw = 0.5 * np.sqrt(0.5 * rule.ref_weights)[None, :] / np.sqrt(h)[:, None]
            D[..., m - 1] += Fv.value * dsw[None]
            D[..., m - 2] -= Fv.value * dsw[None]
        return r.ravel(), self._scatter(D.transpose(1, 2, 0, 3))

    def objective(self, z, quad_order=None):
        r = self.residuals(z, quad_order, jac=False)
        return float(r @ r)

    def gradient(self, z):
        r, J = self.residuals(z)
        return 2.0 * (J.T @ r)

    def path(self, z, jac=True):
        """Path constraints ``G <= 0`` at the union of state and control supports."""
        p = self.problem
        if not p.n_g:
            return (np.zeros(0), np.zeros((0, self.n))) if jac else np.zeros(0)
        vals = self._points(z, self._path_pts, jac)
        G = self._call(p.path, p.n_g, vals)
        if not jac:
            return G.transpose(1, 2, 0).ravel()
        return (G.value.transpose(1, 2, 0).ravel(),
                self._scatter(G.deriv.transpose(1, 2, 0, 3)))

    def _boundary(self, fn, n_rows, z):
        if fn is None or not n_rows:
            return np.zeros(0), np.zeros((0, self.n))
        S, _, _ = self.layout.unpack(z)
        n_x = self.layout.n_x
        v = np.concatenate([S[:, 0], S[:, -1]])
        p = self.problem
        val, Jv = ad.value_and_jacobian(
            lambda w: eval_rows(fn, w[:n_x], w[n_x:], p.t0, p.tf), v)
        J = np.zeros((len(val), self.n))
        gidx = np.concatenate([self.layout.state_index[:, 0],
                               self.layout.state_index[:, -1]])
        for k, g in enumerate(gidx):
            if g >= 0:
                J[:, g] += Jv[:, k]
        return val, J

    def eq(self, z):
        return self._boundary(self.problem.boundary_eq, self.problem.n_e, z)

    def ineq(self, z):
        """Nonlinear ``<= 0`` rows: non-affine path rows, boundary inequalities."""
        g, Jg = self.path(z)
        if len(self._path_linear):
            g, Jg = g[~self._path_linear], Jg[~self._path_linear]
        bi, Jb = self._boundary(self.problem.boundary_ineq, self.problem.n_i, z)
        return np.concatenate([g, bi]), np.vstack([Jg, Jb])

    def inequality_constraints(self, z):
        """All ``<= 0`` rows: path, mesh interval bounds, boundary inequalities."""
        g = self.path(z, jac=False)
        mesh = self._mesh_A @ z - self._mesh_b
        bi, _ = self._boundary(self.problem.boundary_ineq, self.problem.n_i, z)
        return np.concatenate([g, mesh, bi])

    def equality_constraints(self, z):
        return self.eq(z)[0]

    def cold_start(self):
        """Zero states and controls (pins kept), uniform mesh."""
        z = np.zeros(self.n)
        if self.mesh.flexible:
            z[self.layout.mesh_offset:] = self.uniform[1:-1]
        return z


def build(problem, bv, mesh):
    return TranscribedNLP(problem, bv, mesh)


def eps_r_of(z, nlp, quad_order=None):
    """Integrated residual normalised by horizon length and equation count."""
    p = nlp.problem
    return nlp.objective(z, quad_order) / ((p.tf - p.t0) * p.n_f)


def quad_tolerance(eps_r, factor=1e-10):
    return factor * max(1.0, eps_r)


def quadrature_error(z, nlp, multiplier=2):
    """``|objective at multiplier*Q - objective at Q|`` for the same ``z``."""
    if multiplier < 2:
        raise ValueError("multiplier must be >= 2")
    q = nlp.mesh.quad_order
    return abs(nlp.objective(z, multiplier * q) - nlp.objective(z, q))


# ----------------------------------------------------------------------------
# trajectories

@dataclass(frozen=True)
class Trajectory:
    """Piecewise-polynomial state and control reconstructed from a solution."""

    nodes: np.ndarray
    state_values: np.ndarray  # (n_x, N*a + 1)
    control_values: np.ndarray  # (n_u, N, b + 1)
    deg_state: int
    deg_control: int

    @property
    def n_intervals(self):
        return len(self.nodes) - 1

    def interval_of(self, t, side="right"):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        i = np.searchsorted(self.nodes, t, side=side) - 1
        return np.clip(i, 0, self.n_intervals - 1)

    def _ref(self, t, i):
        lo, hi = self.nodes[i], self.nodes[i + 1]
        xi = 2.0 * (t - lo) / (hi - lo) - 1.0
        xi = np.where(t == lo, -1.0, np.where(t == hi, 1.0, xi))
        return xi

    def _eval(self, t, side, which):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        idx = self.interval_of(t, side)
        a, b = self.deg_state, self.deg_control
        nrows = self.control_values.shape[0] if which == "u" else self.state_values.shape[0]
        out = np.zeros((nrows, len(t)))
        for i in np.unique(idx):
            sel = idx == i
            xi = self._ref(t[sel], i)
            if which == "u":
                M = basis_matrix(_ref_supports(b), xi)
                out[:, sel] = self.control_values[:, i, :] @ M.T
            else:
                vals = self.state_values[:, i * a:i * a + a + 1]
                if which == "x":
                    # one-hot rows at supports keep nodal values exact
                    M = basis_matrix(_ref_supports(a), xi)
                    out[:, sel] = vals @ M.T
                else:
                    M = basis_deriv_matrix(_ref_supports(a), xi)
                    h = self.nodes[i + 1] - self.nodes[i]
                    out[:, sel] = (vals @ M.T) * (2.0 / h)
        return out

    def state(self, t, side="right"):
        return self._eval(t, side, "x")

    def state_deriv(self, t, side="right"):
        return self._eval(t, side, "xd")

    def control(self, t, side="right"):
        """Control at ``t``; ``side='left'`` takes the limit from the left at nodes."""
        return self._eval(t, side, "u")

    def sample(self, per_interval=20):
        """Rows ``(t, x, u)`` at uniform points of every interval, both node sides."""
        ts, xs, us = [], [], []
        for i in range(self.n_intervals):
            t = np.linspace(self.nodes[i], self.nodes[i + 1], per_interval)
            t[0], t[-1] = self.nodes[i], self.nodes[i + 1]
            ts.append(t)
            xs.append(self._eval_in(t, i, "x"))
            us.append(self._eval_in(t, i, "u"))
        return np.concatenate(ts), np.concatenate(xs, axis=1), np.concatenate(us, axis=1)

    def _eval_in(self, t, i, which):
        a, b = self.deg_state, self.deg_control
        xi = self._ref(t, i)
        if which == "u":
            return self.control_values[:, i, :] @ basis_matrix(_ref_supports(b), xi).T
        vals = self.state_values[:, i * a:i * a + a + 1]
        return vals @ basis_matrix(_ref_supports(a), xi).T


def extract_trajectory(z, nlp):
    S, C, _ = nlp.layout.unpack(z)
    return Trajectory(np.array(nlp.nodes(z), dtype=float), S, C,
                      nlp.mesh.deg_state, nlp.mesh.deg_control)


def write_trajectory_csv(path, traj, per_interval=20):
    t, x, u = traj.sample(per_interval)
    header = (["t"] + [f"x{k + 1}" for k in range(x.shape[0])]
              + [f"u{k + 1}" for k in range(u.shape[0])])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for k in range(len(t)):
            w.writerow([f"{v:.17g}" for v in (t[k], *x[:, k], *u[:, k])])


def write_mesh(path, nodes):
    with open(path, "w") as fh:
        for v in nodes:
            fh.write(f"{v:.17g}\n")


def read_mesh(path):
    return np.loadtxt(path, ndmin=1)


# ----------------------------------------------------------------------------

@dataclass
class SolveReport:
    eps_r: float
    eps_q: float
    nlp_iterations: int
    wall_time: float
    mesh: np.ndarray
    status: str
    violation: float = 0.0
    objective: float = 0.0
    extra: dict = field(default_factory=dict)

    def to_json_dict(self):
        return {
            "eps_r": self.eps_r,
            "eps_q": self.eps_q,
            "iterations": self.nlp_iterations,
            "wall_time_s": self.wall_time,
            "status": self.status,
            "mesh": [float(v) for v in self.mesh],
            "violation": self.violation,
            "objective": self.objective,
            **self.extra,
        }

