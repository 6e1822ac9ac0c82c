import numpy as np
import pytest

from flexirm import benchmarks
from flexirm.problem import BoundaryValues, DynamicsProblem, validate


def test_exp_decay_valid():
    case = benchmarks.exp_decay()
    rep = validate(case.problem, case.boundary)
    assert rep.ok and case.problem.n_f == 1


def test_dimension_mismatch_reported():
    p = DynamicsProblem(n_x=2, n_u=0, n_f=3, t0=0, tf=1,
                        dynamics=lambda xd, x, u, t: [xd[0] - x[1], xd[1] + x[0]])
    rep = validate(p)
    assert not rep.ok
    assert any("dimension mismatch" in e for e in rep.errors)


def test_satellite_valid_with_eight_rows():
    case = benchmarks.satellite()
    assert validate(case.problem, case.boundary).ok
    assert case.problem.n_f == 8


def test_nonfinite_probe_is_warning():
    p = DynamicsProblem(n_x=1, n_u=0, n_f=1, t0=0, tf=1,
                        dynamics=lambda xd, x, u, t: [xd[0] - 1.0 / x[0]])
    with pytest.warns(RuntimeWarning):
        rep = validate(p)
    assert rep.ok and rep.warnings


def test_declared_path_without_callable():
    p = DynamicsProblem(n_x=1, n_u=0, n_f=1, n_g=2, t0=0, tf=1,
                        dynamics=lambda xd, x, u, t: [xd[0]])
    assert not validate(p).ok


def test_bad_boundary_length():
    case = benchmarks.exp_decay()
    assert not validate(case.problem, BoundaryValues(x0=[1.0, 2.0])).ok


def test_horizon_must_be_positive():
    with pytest.raises(ValueError):
        DynamicsProblem(n_x=1, n_u=0, n_f=1, t0=1, tf=1, dynamics=lambda *a: [a[0][0]])


def test_nan_pins_leave_components_free():
    pinned, vals = BoundaryValues(x0=[1.0, np.nan]).mask(0, 2)
    assert pinned.tolist() == [True, False]
    assert vals.tolist() == [1.0, 0.0]


@pytest.mark.parametrize("name", ["exp_decay", "block_move"])
def test_reference_zeroes_dynamics(name):
    case = benchmarks.get(name)
    ref = case.reference
    t = np.random.default_rng(1).uniform(case.problem.t0, case.problem.tf, 100)
    if ref.events:
        # stay away from control switches
        t = t[np.min(np.abs(t[:, None] - np.asarray(ref.events)[None, :]), axis=1) > 1e-6]
    F = np.asarray(case.problem.dynamics(ref.state_deriv(t), ref.state(t), ref.control(t), t))
    assert np.max(np.abs(F)) <= 1e-10
