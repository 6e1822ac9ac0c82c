"""Rest-to-rest spacecraft reorientation on fixed and flexible meshes.

A short version of the convergence study; pass N values on the command
line (default 5 8 10).
"""

import sys

from flexirm import benchmarks
from flexirm.convergence import run_convergence

n_values = [int(a) for a in sys.argv[1:]] or [5, 8, 10]
case = benchmarks.satellite()


def show(row):
    print(f"{row.scheme:8s} N={row.N:3d} eps_R={row.eps_r:.3e} "
          f"time={row.wall_time_s:6.1f}s {row.status}", flush=True)


report = run_convergence(case, n_values, repeats=1, progress=show, keep_results=True)
for scheme, fit in report.fits.items():
    print(f"{scheme}: fitted order {fit.order:.2f} over {fit.n_points} points")
n = max(n_values)
print("flexible nodes at N =", n, ":",
      " ".join(f"{t:.2f}" for t in report.solves[("flexible", n)].mesh))
