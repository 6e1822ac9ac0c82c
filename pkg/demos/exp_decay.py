"""Convergence of the integrated residual on xdot = -x as the mesh is refined."""

import numpy as np

from flexirm import benchmarks
from flexirm.convergence import run_convergence
from flexirm.pipeline import solve_case
from flexirm.transcription import MeshConfig

case = benchmarks.exp_decay()
report = run_convergence(case, [3, 10, 30, 100], schemes=("fixed",), deg_state=3,
                         quad_order=6, repeats=1, fit_floor=3)
for row in report.rows:
    print(f"N={row.N:4d}  eps_R={row.eps_r:.3e}  eps_Q={row.eps_q:.1e}  {row.status}")
fit = report.fits["fixed"]
print(f"fitted order {fit.order:.2f} (R^2 {fit.r2:.4f})")

# the reconstructed state against the exact solution
res = solve_case(case, MeshConfig(10, deg_state=3, quad_order=6))
t = np.linspace(0, 3, 7)
for ti, xi in zip(t, res.trajectory.state(t)[0]):
    print(f"t={ti:.2f}  x={xi:.8f}  exact={np.exp(-ti):.8f}")
