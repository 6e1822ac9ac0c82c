import math

import numpy as np
import pytest

from flexirm import benchmarks
from flexirm.benchmarks import ConfigurationError, ParameterError


def test_exp_decay_reference():
    ref = benchmarks.exp_decay().reference
    assert ref.state(0.0)[0, 0] == 1.0
    assert ref.state(3.0)[0, 0] == pytest.approx(0.0497871, abs=1e-7)


def test_block_move_switch_time_and_work():
    case = benchmarks.block_move()
    ts = case.params["t_switch"]
    assert ts == pytest.approx((1 - math.sqrt(0.5)) / 2, abs=1e-15)
    assert ts == pytest.approx(0.1464466, abs=1e-7)
    assert case.params["work"] == pytest.approx(1.3725830, abs=1e-7)
    assert case.reference.control(0.5)[0, 0] == 0.0
    # smoothing bias stays below 1e-5
    assert abs(case.params["work_smoothed"] - case.params["work"]) < 1e-5


def test_block_move_reference_reaches_targets():
    case = benchmarks.block_move()
    x1 = case.reference.state(1.0)[:, 0]
    np.testing.assert_allclose(x1, case.boundary.xf, atol=1e-12)


@pytest.mark.parametrize("u_max", [3.99, 1.0])
def test_block_move_needs_enough_thrust(u_max):
    with pytest.raises(ParameterError):
        benchmarks.block_move(u_max=u_max)


def test_block_move_stages_descend_to_target():
    case = benchmarks.block_move()
    assert case.params["continuation"] == (1e-1, 1e-2, 1e-3, 1e-4, 1e-5)
    assert len(case.stages) == 5


def test_satellite_boundary():
    case = benchmarks.satellite()
    qf = case.boundary.xf[:4]
    np.testing.assert_allclose(qf, [0.9659258, 0, 0, 0.2588190], atol=1e-7)
    assert np.linalg.norm(case.boundary.x0[:4]) == 1.0
    assert np.linalg.norm(qf) == pytest.approx(1.0, abs=1e-15)
    assert case.boundary.x0[4:].tolist() == [0, 0, 0]
    assert case.boundary.xf[4:].tolist() == [0, 0, 0]
    assert case.problem.tf == 28.630408


def test_satellite_requires_inertia(tmp_path):
    cfg = tmp_path / "bad.ini"
    cfg.write_text("[satellite]\ninertia_xx = 1\n")
    with pytest.raises(ConfigurationError, match="inertia_yy, inertia_zz"):
        benchmarks.satellite(config=str(cfg))


def test_config_env_override(tmp_path, monkeypatch):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[exp_decay]\ntf = 2.0\n")
    monkeypatch.setenv(benchmarks.CONFIG_ENV, str(cfg))
    assert benchmarks.exp_decay().problem.tf == 2.0


def test_unreadable_config():
    with pytest.raises(ConfigurationError):
        benchmarks.load_config("/nonexistent/flexirm.ini")


def test_unknown_problem():
    with pytest.raises(KeyError):
        benchmarks.get("pendulum")


def test_satellite_rest_state_is_stationary():
    # q constant and w = 0 zero every differential row
    case = benchmarks.satellite()
    x = np.tile(case.boundary.xf[:, None], (1, 5))
    F = np.asarray(case.problem.dynamics(np.zeros((7, 5)), x, np.zeros((3, 5)), np.zeros(5)))
    assert np.max(np.abs(F)) <= 1e-15


def test_satellite_pure_spin_about_x():
    # constant rate about body x with zero torque solves the Euler rows,
    # and q = (sin(wt/2), 0, 0, cos(wt/2)) solves the kinematics
    case = benchmarks.satellite()
    w = 0.05
    t = np.random.default_rng(0).uniform(0, case.problem.tf, 100)
    q = np.stack([np.sin(w * t / 2), 0 * t, 0 * t, np.cos(w * t / 2)])
    qd = np.stack([w / 2 * np.cos(w * t / 2), 0 * t, 0 * t, -w / 2 * np.sin(w * t / 2)])
    x = np.vstack([q, np.full_like(t, w), 0 * t, 0 * t])
    xd = np.vstack([qd, np.zeros((3, 100))])
    F = np.asarray(case.problem.dynamics(xd, x, np.zeros((3, 100)), t))
    assert np.max(np.abs(F)) <= 1e-10


@pytest.mark.slow
def test_satellite_norm_within_residual_budget():
    from flexirm.pipeline import solve_case
    from flexirm.transcription import MeshConfig

    case = benchmarks.satellite()
    res = solve_case(case, MeshConfig(6, phi=0.5, deg_state=4, deg_control=1, quad_order=7,
                                      flexible=True))
    assert res.accepted
    S, _, _ = res.nlp.layout.unpack(res.z)
    drift = np.max(np.abs(np.sum(S[:4] ** 2, axis=0) - 1.0))
    p = case.problem
    assert drift <= math.sqrt(res.report.eps_r * p.n_f * (p.tf - p.t0))
