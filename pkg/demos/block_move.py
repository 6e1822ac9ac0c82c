"""Flexible mesh nodes moving onto the switches of a bang-off-bang control.

The block must travel one unit in unit time with minimal work; the control
jumps at t* and 1 - t*. On a fixed uniform mesh the jumps fall inside
intervals and the residual stalls, while a flexible mesh places nodes on
them.
"""

from flexirm import benchmarks
from flexirm.pipeline import solve_case
from flexirm.transcription import MeshConfig

case = benchmarks.block_move()
ts = case.params["t_switch"]
print(f"analytic switch times {ts:.7f} and {1 - ts:.7f}")
for flexible in (False, True):
    mesh = MeshConfig(8, phi=0.5, deg_state=2, deg_control=1, quad_order=5, flexible=flexible)
    res = solve_case(case, mesh)
    label = "flexible" if flexible else "fixed"
    print(f"{label:8s} eps_R={res.report.eps_r:.3e} status={res.report.status}")
    print("         nodes", " ".join(f"{t:.5f}" for t in res.report.mesh))
