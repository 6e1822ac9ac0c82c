"""Gauss-Legendre quadrature rules on [-1, 1] and their affine images."""

import threading
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

MAX_ORDER = 64
_NEWTON_TOL = 1e-15
_NEWTON_MAXITER = 100


class UnsupportedOrderError(ValueError):
    pass


@dataclass(frozen=True)
class QuadratureRule:
    """Reference Gauss-Legendre rule with ``order`` nodes in (-1, 1)."""

    order: int
    ref_nodes: np.ndarray
    ref_weights: np.ndarray

    def map(self, t_lo, t_hi):
        return map_rule(self, t_lo, t_hi)


def _legendre_and_derivative(n, x):
    # three-term recurrence; returns P_n(x), P_n'(x)
    p0 = np.ones_like(x)
    if n == 0:
        return p0, np.zeros_like(x)
    p1 = x.copy()
    for k in range(2, n + 1):
        p0, p1 = p1, ((2 * k - 1) * x * p1 - (k - 1) * p0) / k
    dp = n * (x * p1 - p0) / (x * x - 1.0)
    return p1, dp


_lock = threading.Lock()


@lru_cache(maxsize=None)
def _build(order):
    k = np.arange(1, order + 1)
    # Chebyshev-like initial guesses, descending in x
    x = np.cos(np.pi * (k - 0.25) / (order + 0.5))
    for _ in range(_NEWTON_MAXITER):
        p, dp = _legendre_and_derivative(order, x)
        dx = p / dp
        x = x - dx
        if np.max(np.abs(dx)) <= _NEWTON_TOL:
            break
    _, dp = _legendre_and_derivative(order, x)
    w = 2.0 / ((1.0 - x * x) * dp * dp)
    x = x[::-1].copy()
    w = w[::-1].copy()
    # enforce exact symmetry
    x = 0.5 * (x - x[::-1])
    w = 0.5 * (w + w[::-1])
    x.flags.writeable = False
    w.flags.writeable = False
    return QuadratureRule(order, x, w)


def gauss_legendre(order):
    """Return the ``order``-point Gauss-Legendre rule on [-1, 1].

    Nodes are ascending roots of the Legendre polynomial of degree
    ``order``; the rule integrates polynomials of degree ``2*order - 1``
    exactly. Rules are cached per order.
    """
    order = int(order)
    if not 1 <= order <= MAX_ORDER:
        raise UnsupportedOrderError(
            f"quadrature order must be in [1, {MAX_ORDER}], got {order}")
    with _lock:
        return _build(order)


def map_rule(rule, t_lo, t_hi):
    """Affinely map ``rule`` onto ``[t_lo, t_hi]``.

    Returns
    -------
    nodes, weights : ndarray
        Mapped nodes and weights; the weights sum to ``t_hi - t_lo``.
    """
    if not t_hi > t_lo:
        raise ValueError(f"degenerate interval [{t_lo}, {t_hi}]")
    half = 0.5 * (t_hi - t_lo)
    mid = 0.5 * (t_hi + t_lo)
    return mid + half * rule.ref_nodes, half * rule.ref_weights
