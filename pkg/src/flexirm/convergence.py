"""Convergence sweeps over the number of intervals, and order fitting.

The residual is modelled as ``eps_R ~ K * h**p`` with ``h = (tf - t0) / N``;
``p`` and ``log K`` come from a least-squares line through
``(ln h, ln eps_R)``.
"""

import csv
import json
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .pipeline import CONVERGED, solve_case

COLUMNS = ("scheme", "N", "eps_r", "eps_q", "wall_time_s", "wall_time_norm",
           "iterations", "status")
SCHEMES = ("fixed", "flexible")


@dataclass
class ConvergenceRow:
    scheme: str
    N: int
    eps_r: float
    eps_q: float
    wall_time_s: float
    wall_time_norm: float
    iterations: int
    status: str


@dataclass(frozen=True)
class OrderFit:
    order: float
    log_k: float
    r2: float
    n_points: int


@dataclass
class ConvergenceReport:
    rows: list = field(default_factory=list)
    horizon: float = 1.0
    fit_floor: int = 5
    fits: dict = field(default_factory=dict)
    # (scheme, N) -> SolveReport, filled when a sweep keeps its results
    solves: dict = field(default_factory=dict)

    def scheme_rows(self, scheme):
        return sorted((r for r in self.rows if r.scheme == scheme), key=lambda r: r.N)

    def refit(self):
        self.fits = {s: fit_order(self.scheme_rows(s), self.horizon, self.fit_floor)
                     for s in sorted({r.scheme for r in self.rows})}
        return self.fits

    def normalize_times(self):
        top = max((r.wall_time_s for r in self.rows), default=0.0)
        for r in self.rows:
            r.wall_time_norm = r.wall_time_s / top if top > 0 else 0.0

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(COLUMNS)
            for r in self.rows:
                w.writerow([r.scheme, r.N, _num(r.eps_r), _num(r.eps_q),
                            _num(r.wall_time_s), _num(r.wall_time_norm),
                            r.iterations, r.status])

    def write_fits(self, path):
        doc = {"horizon": self.horizon, "fit_floor": self.fit_floor,
               "fits": {k: asdict(v) for k, v in self.fits.items()}}
        with open(path, "w") as fh:
            json.dump(doc, fh, indent=2, allow_nan=True)


def _num(x):
    return format(float(x), ".17g")


def read_csv(path, horizon=1.0, fit_floor=5):
    rows = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            rows.append(ConvergenceRow(
                scheme=rec["scheme"], N=int(rec["N"]), eps_r=float(rec["eps_r"]),
                eps_q=float(rec["eps_q"]), wall_time_s=float(rec["wall_time_s"]),
                wall_time_norm=float(rec["wall_time_norm"]),
                iterations=int(rec["iterations"]), status=rec["status"]))
    return ConvergenceReport(rows, horizon, fit_floor)


def fit_order(rows, horizon, floor=5):
    """Fit ``ln eps_R = ln K + p ln(horizon / N)`` over usable rows.

    Rows count only when converged, ``N >= floor`` and ``eps_R > 0``. With
    fewer than two distinct ``N`` the fit is all-NaN.
    """
    pts = [(math.log(horizon / r.N), math.log(r.eps_r)) for r in rows
           if r.status == CONVERGED and r.N >= floor and r.eps_r > 0]
    if len({x for x, _ in pts}) < 2:
        return OrderFit(math.nan, math.nan, math.nan, len(pts))
    x, y = np.array(pts).T
    p, log_k = np.polyfit(x, y, 1)
    resid = y - (p * x + log_k)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(resid @ resid) / ss_tot if ss_tot > 0 else 1.0
    return OrderFit(float(p), float(log_k), r2, len(pts))


def run_convergence(case, n_values, schemes=SCHEMES, phi=None, deg_state=None,
                    deg_control=None, quad_order=None, repeats=5, fit_floor=5,
                    opts=None, progress=None, keep_results=False):
    """Solve ``case`` for every scheme and N; wall times averaged over repeats.

    The first repeat supplies the reported solution; later repeats only
    time the solve (the solver is deterministic, so they agree).
    """
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    base = case.mesh
    over = {k: v for k, v in dict(phi=phi, deg_state=deg_state, deg_control=deg_control,
                                  quad_order=quad_order).items() if v is not None}
    horizon = case.problem.tf - case.problem.t0
    report = ConvergenceReport(horizon=horizon, fit_floor=fit_floor)
    for scheme in schemes:
        if scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {scheme!r}")
        for n in n_values:
            mesh = replace(base, n_intervals=int(n), flexible=scheme == "flexible", **over)
            times = []
            first = None
            for _ in range(repeats):
                res = solve_case(case, mesh, opts)
                times.append(res.report.wall_time)
                first = first or res
            rep = first.report
            row = ConvergenceRow(scheme, int(n), rep.eps_r, rep.eps_q,
                                 float(np.mean(times)), 0.0, rep.nlp_iterations, rep.status)
            report.rows.append(row)
            if keep_results:
                report.solves[(scheme, int(n))] = rep
            if progress is not None:
                progress(row)
    report.normalize_times()
    report.refit()
    return report
