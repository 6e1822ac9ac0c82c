"""Build, solve and verify one transcription."""

import time
from dataclasses import dataclass

import numpy as np

from . import nlp as nlp_solver
from .problem import validate
from .transcription import (SolveReport, build, eps_r_of, extract_trajectory,
                            quad_tolerance, quadrature_error)

CONVERGED = "converged"
QUAD_UNVERIFIED = "quadrature-unverified"


class InvalidProblemError(ValueError):
    pass


@dataclass
class SolveResult:
    z: np.ndarray
    nlp: object
    solution: nlp_solver.NlpSolution
    report: SolveReport

    @property
    def trajectory(self):
        return extract_trajectory(self.z, self.nlp)

    @property
    def accepted(self):
        return self.report.status == CONVERGED


def solve_problem(problem, bv, mesh, opts=None, z0=None, quad_multiplier=2,
                  quad_tol_factor=1e-10, stages=()):
    """Cold-start (or warm-start from ``z0``) solve with doubled-Q check.

    ``stages`` is a sequence of ``(problem, bv)`` pairs with the same layout,
    solved in order before ``problem``, each warm-starting the next (a
    continuation in some problem parameter). Iterations and wall time are
    summed over all stages; wall time covers the NLP solves only.
    """
    report = validate(problem, bv)
    if not report.ok:
        raise InvalidProblemError("; ".join(report.errors))
    nlp = build(problem, bv, mesh)
    if z0 is None:
        z0 = nlp.cold_start()
    wall = 0.0
    iterations = 0
    for p_stage, bv_stage in stages:
        pre = build(p_stage, bv_stage, mesh)
        if pre.n != nlp.n:
            raise InvalidProblemError("continuation stage has a different layout")
        start = time.perf_counter()
        sol = nlp_solver.solve(pre, z0, opts)
        wall += time.perf_counter() - start
        iterations += sol.iterations
        z0 = sol.z
    start = time.perf_counter()
    sol = nlp_solver.solve(nlp, z0, opts)
    wall += time.perf_counter() - start
    iterations += sol.iterations
    z = sol.z
    eps_r = eps_r_of(z, nlp)
    eps_q = quadrature_error(z, nlp, quad_multiplier)
    if sol.status != nlp_solver.Status.CONVERGED:
        status = sol.status.value
    elif eps_q > quad_tolerance(eps_r, quad_tol_factor):
        status = QUAD_UNVERIFIED
    else:
        status = CONVERGED
    rep = SolveReport(eps_r=eps_r, eps_q=eps_q, nlp_iterations=iterations,
                      wall_time=wall, mesh=np.array(nlp.nodes(z)), status=status,
                      violation=sol.violation, objective=sol.objective)
    return SolveResult(z, nlp, sol, rep)


def solve_case(case, mesh=None, opts=None, **kw):
    kw.setdefault("stages", case.stages)
    return solve_problem(case.problem, case.boundary, mesh or case.mesh, opts, **kw)
