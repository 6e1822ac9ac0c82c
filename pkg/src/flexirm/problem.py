"""Continuous feasibility problems: dynamics, path and boundary constraints.

Callables receive stacked arrays with one row per component and one column
per evaluation time, e.g. ``dynamics(xdot, x, u, t)`` gets ``xdot`` and
``x`` of shape ``(n_x, P)``, ``u`` of shape ``(n_u, P)`` and ``t`` of shape
``(P,)``, and returns ``n_f`` rows (a list of arrays, or an array). Inputs
may be :class:`~flexirm.autodiff.Dual`, so use numpy ufuncs rather than
``math``.
"""

import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import autodiff as ad


@dataclass(frozen=True)
class DynamicsProblem:
    n_x: int
    n_u: int
    n_f: int
    t0: float
    tf: float
    dynamics: Callable
    n_g: int = 0
    path: Optional[Callable] = None
    n_e: int = 0
    boundary_eq: Optional[Callable] = None
    n_i: int = 0
    boundary_ineq: Optional[Callable] = None
    name: str = "problem"

    def __post_init__(self):
        if not self.tf > self.t0:
            raise ValueError(f"need tf > t0, got [{self.t0}, {self.tf}]")
        if self.n_f < 1:
            raise ValueError("a problem needs at least one dynamics equation")


@dataclass(frozen=True)
class BoundaryValues:
    """Pinned state values at ``t0`` and ``tf``.

    ``NaN`` entries leave that component free, so partial pins are allowed.
    """

    x0: Optional[np.ndarray] = None
    xf: Optional[np.ndarray] = None

    def mask(self, which, n_x):
        v = self.x0 if which == 0 else self.xf
        if v is None:
            return np.zeros(n_x, dtype=bool), np.zeros(n_x)
        v = np.asarray(v, dtype=float)
        if v.shape != (n_x,):
            raise ValueError(f"boundary vector must have length {n_x}")
        pinned = ~np.isnan(v)
        return pinned, np.where(pinned, v, 0.0)


@dataclass
class ValidationReport:
    ok: bool = True
    errors: list = field(default_factory=list)
    warnings: list = field(default_factory=list)

    def __bool__(self):
        return self.ok


def eval_rows(fn, *args):
    """Call ``fn`` and stack its output rows into an array or dual."""
    out = fn(*args)
    if isinstance(out, (list, tuple)):
        if len(out) == 0:
            return np.zeros((0,) + np.shape(ad.value_of(args[-1])))
        return ad.stack(out)
    if isinstance(out, ad.Dual):
        return out
    return np.asarray(out, dtype=float)


def _probe(report, label, fn, expected, *args):
    try:
        out = ad.value_of(eval_rows(fn, *args))
    except Exception as exc:  # report, don't raise
        report.ok = False
        report.errors.append(f"{label}: raised {exc!r}")
        return
    rows = out.shape[0] if out.ndim else 1
    if rows != expected:
        report.ok = False
        report.errors.append(
            f"{label}: dimension mismatch, returned {rows} rows, declared {expected}")
    if not np.all(np.isfinite(out)):
        report.warnings.append(f"{label}: non-finite output at probe point")


def validate(p, bv=None):
    """Probe every callable of ``p`` with zeros at ``t0``."""
    report = ValidationReport()
    xd = np.zeros((p.n_x, 1))
    x = np.zeros((p.n_x, 1))
    u = np.zeros((p.n_u, 1))
    t = np.array([p.t0])
    _probe(report, "dynamics", p.dynamics, p.n_f, xd, x, u, t)
    if p.path is not None:
        _probe(report, "path", p.path, p.n_g, xd, x, u, t)
    elif p.n_g:
        report.ok = False
        report.errors.append("path: n_g > 0 but no path callable")
    xb = np.zeros(p.n_x)
    for label, fn, n in (("boundary_eq", p.boundary_eq, p.n_e),
                         ("boundary_ineq", p.boundary_ineq, p.n_i)):
        if fn is not None:
            _probe(report, label, fn, n, xb, xb, p.t0, p.tf)
        elif n:
            report.ok = False
            report.errors.append(f"{label}: declared {n} rows but no callable")
    if bv is not None:
        for which in (0, 1):
            try:
                bv.mask(which, p.n_x)
            except ValueError as exc:
                report.ok = False
                report.errors.append(f"boundary values: {exc}")
    for w in report.warnings:
        warnings.warn(w, RuntimeWarning, stacklevel=2)
    return report
