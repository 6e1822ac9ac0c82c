"""Barycentric Lagrange interpolation on Legendre-Gauss-Lobatto supports.

Supports always include both interval endpoints so that neighbouring
intervals can share the nodal value at a mesh node. Degree 0 is accepted
as a single midpoint support, which is how piecewise-constant controls
are represented.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

_EXTRAP_GUARD = 1e-9


class InvalidIntervalError(ValueError):
    pass


@lru_cache(maxsize=None)
def lobatto_points(degree):
    """Legendre-Gauss-Lobatto points on [-1, 1], ascending.

    ``degree + 1`` points: the endpoints plus the roots of P'_degree.
    """
    if degree == 0:
        pts = np.zeros(1)
    elif degree == 1:
        pts = np.array([-1.0, 1.0])
    else:
        n = degree
        x = -np.cos(np.pi * np.arange(n + 1) / n)
        x_old = np.full_like(x, 2.0)
        p = np.zeros((n + 1, n + 1))
        it = 0
        while np.max(np.abs(x - x_old)) > 1e-16 and it < 100:
            x_old = x
            p[0] = 1.0
            p[1] = x
            for k in range(2, n + 1):
                p[k] = ((2 * k - 1) * x * p[k - 1] - (k - 1) * p[k - 2]) / k
            x = x_old - (x * p[n] - p[n - 1]) / ((n + 1) * p[n])
            it += 1
        x[0], x[-1] = -1.0, 1.0
        pts = 0.5 * (x - x[::-1])
    pts.flags.writeable = False
    return pts


def barycentric_weights(points):
    points = np.asarray(points, dtype=float)
    diff = points[:, None] - points[None, :]
    np.fill_diagonal(diff, 1.0)
    return 1.0 / np.prod(diff, axis=1)


@dataclass(frozen=True)
class SupportSet:
    """Interpolation supports on ``[t_lo, t_hi]`` with barycentric weights."""

    points: np.ndarray
    bary_weights: np.ndarray
    t_lo: float
    t_hi: float

    @property
    def degree(self):
        return len(self.points) - 1


def make_supports(t_lo, t_hi, degree):
    """Map the ``degree + 1`` Lobatto points onto ``[t_lo, t_hi]``."""
    if not t_hi > t_lo:
        raise InvalidIntervalError(f"need t_hi > t_lo, got [{t_lo}, {t_hi}]")
    if degree < 0:
        raise ValueError("degree must be non-negative")
    ref = lobatto_points(int(degree))
    pts = t_lo + 0.5 * (t_hi - t_lo) * (ref + 1.0)
    if degree >= 1:
        pts[0], pts[-1] = t_lo, t_hi
    return SupportSet(pts, barycentric_weights(pts), float(t_lo), float(t_hi))


def _check_range(s, t):
    guard = _EXTRAP_GUARD * (s.t_hi - s.t_lo)
    if np.any(t < s.t_lo - guard) or np.any(t > s.t_hi + guard):
        raise ValueError(f"evaluation point outside [{s.t_lo}, {s.t_hi}]")


def basis_matrix(s, t):
    """Matrix ``L`` with ``L[k, j] = l_j(t[k])`` for the Lagrange basis of ``s``."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    _check_range(s, t)
    diff = t[:, None] - s.points[None, :]
    hit = diff == 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        c = s.bary_weights[None, :] / diff
        L = c / np.sum(c, axis=1, keepdims=True)
    rows = np.any(hit, axis=1)
    L[rows] = hit[rows].astype(float)
    return L


def basis_deriv_matrix(s, t):
    """Matrix ``D`` with ``D[k, j] = l_j'(t[k])``."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    _check_range(s, t)
    if s.degree == 0:
        return np.zeros((len(t), 1))
    diff = t[:, None] - s.points[None, :]
    hit = diff == 0.0
    L = basis_matrix(s, t)
    with np.errstate(divide="ignore", invalid="ignore"):
        c = s.bary_weights[None, :] / diff
        denom = np.sum(c, axis=1)
        # d/dt l_j(t) = sum_k c_k (l_j(t) - delta_jk) / (t - x_k) / sum_k c_k
        num = np.einsum("pk,pj->pj", c / diff, L) - (c / diff)
        D = num / denom[:, None]
    rows = np.flatnonzero(np.any(hit, axis=1))
    if len(rows):
        Dm = diff_matrix(s)
        for r in rows:
            D[r] = Dm[np.flatnonzero(hit[r])[0]]
    return D


def eval_interp(s, values, t):
    """Evaluate the interpolant through ``values`` at ``t``.

    ``values`` has the supports along its first axis. Scalar ``t`` returns a
    scalar (or the trailing shape of ``values``); array ``t`` adds a leading
    axis. Hitting a support returns the stored value exactly.
    """
    values = np.asarray(values, dtype=float)
    scalar = np.ndim(t) == 0
    L = basis_matrix(s, t)
    out = np.tensordot(L, values, axes=(1, 0))
    # exact pass-through at supports
    diff = np.atleast_1d(np.asarray(t, dtype=float))[:, None] - s.points[None, :]
    for r, j in zip(*np.nonzero(diff == 0.0)):
        out[r] = values[j]
    return out[0] if scalar else out


def eval_interp_deriv(s, values, t):
    """Time derivative of the interpolant through ``values`` at ``t``."""
    values = np.asarray(values, dtype=float)
    scalar = np.ndim(t) == 0
    out = np.tensordot(basis_deriv_matrix(s, t), values, axes=(1, 0))
    return out[0] if scalar else out


def diff_matrix(s):
    """Differentiation matrix at the supports, rows summing to zero."""
    x = s.points
    n = len(x)
    if n == 1:
        return np.zeros((1, 1))
    w = s.bary_weights
    diff = x[:, None] - x[None, :]
    np.fill_diagonal(diff, 1.0)
    D = (w[None, :] / w[:, None]) / diff
    np.fill_diagonal(D, 0.0)
    np.fill_diagonal(D, -np.sum(D, axis=1))
    return D
