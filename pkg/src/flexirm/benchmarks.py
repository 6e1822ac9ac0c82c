"""Built-in benchmark problems with analytic reference data.

Parameters come from an INI file (``configparser``). The packaged
``data/benchmarks.ini`` is used unless a path is given or the
``FLEXIRM_CONFIG`` environment variable points elsewhere.

Schema (section: keys)

* ``exp_decay``: ``t0``, ``tf``, ``x0``
* ``block_move``: ``u_max``, ``smoothing_eps``, ``continuation_eps`` (comma
  separated smoothing values solved first, largest first; empty disables)
* ``satellite``: ``inertia_xx``, ``inertia_yy``, ``inertia_zz`` (required,
  no defaults), ``u_max``, ``tf``, ``rotation_deg``
"""

import configparser
import os
from dataclasses import dataclass, field
from importlib import resources
from typing import Callable, Optional

import numpy as np

from .autodiff import smooth_abs
from .problem import BoundaryValues, DynamicsProblem
from .transcription import MeshConfig

CONFIG_ENV = "FLEXIRM_CONFIG"


class ConfigurationError(ValueError):
    pass


class ParameterError(ValueError):
    pass


@dataclass(frozen=True)
class Reference:
    """Analytic solution; each callable maps times ``(P,)`` to ``(rows, P)``."""

    state: Callable
    state_deriv: Callable
    control: Optional[Callable] = None
    events: tuple = ()


@dataclass(frozen=True)
class BenchmarkCase:
    problem: DynamicsProblem
    boundary: BoundaryValues
    mesh: MeshConfig
    reference: Optional[Reference] = None
    params: dict = field(default_factory=dict)
    # (problem, boundary) pairs solved first, each warm-starting the next
    stages: tuple = ()


def default_config_path():
    return str(resources.files("flexirm") / "data" / "benchmarks.ini")


def load_config(path=None):
    path = path or os.environ.get(CONFIG_ENV) or default_config_path()
    cfg = configparser.ConfigParser()
    if not cfg.read(path):
        raise ConfigurationError(f"cannot read configuration file {path!r}")
    return cfg


def _section(cfg, name):
    if cfg is None:
        cfg = load_config()
    elif isinstance(cfg, (str, os.PathLike)):
        cfg = load_config(cfg)
    return cfg[name] if cfg.has_section(name) else {}


def _get(sec, key, default):
    return float(sec[key]) if key in sec else default


# ----------------------------------------------------------------------------

def exp_decay(config=None):
    """``xdot = -x`` on ``[0, 3]`` with ``x(0) = 1``."""
    sec = _section(config, "exp_decay")
    t0, tf, x0 = _get(sec, "t0", 0.0), _get(sec, "tf", 3.0), _get(sec, "x0", 1.0)

    def dynamics(xd, x, u, t):
        return [xd[0] + x[0]]

    problem = DynamicsProblem(n_x=1, n_u=0, n_f=1, t0=t0, tf=tf,
                              dynamics=dynamics, name="exp_decay")
    ref = Reference(
        state=lambda t: x0 * np.exp(-(np.atleast_1d(t) - t0))[None, :],
        state_deriv=lambda t: -x0 * np.exp(-(np.atleast_1d(t) - t0))[None, :],
        control=lambda t: np.zeros((0, np.size(t))),
    )
    return BenchmarkCase(problem, BoundaryValues(x0=[x0]),
                         MeshConfig(10, deg_state=3, deg_control=0, quad_order=6),
                         ref, dict(t0=t0, tf=tf, x0=x0))


def switch_time(u_max):
    if u_max < 4.0:
        raise ParameterError(f"u_max = {u_max} < 4: the move cannot finish in unit time")
    return 0.5 * (1.0 - np.sqrt(1.0 - 4.0 / u_max))


def _smoothed_ramp_work(tau, c, eps):
    # integral_0^tau sqrt((c s)^2 + eps^2) ds
    tau = np.asarray(tau, dtype=float)
    root = np.sqrt((c * tau) ** 2 + eps ** 2)
    return 0.5 * (tau * root + (eps ** 2 / c) * np.arcsinh(c * tau / eps))


def _block_move_problem(u_max, eps):
    ts = switch_time(u_max)
    work_smooth = 2.0 * float(_smoothed_ramp_work(ts, u_max * u_max, eps)) + eps * (1.0 - 2.0 * ts)

    def dynamics(xd, x, u, t):
        return [xd[0] - x[1], xd[1] - u[0], xd[2] - smooth_abs(u[0] * x[1], eps)]

    def path(xd, x, u, t):
        return [u[0] - u_max, -u[0] - u_max]

    problem = DynamicsProblem(n_x=3, n_u=1, n_f=3, n_g=2, t0=0.0, tf=1.0,
                              dynamics=dynamics, path=path, name="block_move")
    return problem, BoundaryValues(x0=[0.0, 0.0, 0.0], xf=[1.0, 0.0, work_smooth]), work_smooth


DEFAULT_CONTINUATION = (1e-1, 1e-2, 1e-3, 1e-4, 1e-5)


def block_move(u_max=None, config=None):
    """Minimum-work block move posed as a feasibility problem.

    States ``(position, velocity, work)``; the final work is pinned to the
    minimum, so the bang-off-bang control with switches at ``t*`` and
    ``1 - t*`` is the target. The work rate uses ``smooth_abs``; the pinned
    work includes the exact smoothing bias of that profile.

    With a small smoothing the residual has a kink wherever ``u x2`` crosses
    zero and a cold start stalls, so the case carries continuation stages
    with larger smoothing that are solved first.
    """
    sec = _section(config, "block_move")
    u_max = float(u_max) if u_max is not None else _get(sec, "u_max", 8.0)
    eps = _get(sec, "smoothing_eps", 1e-6)
    if "continuation_eps" in sec:
        raw = [v.strip() for v in sec["continuation_eps"].split(",")]
        schedule = tuple(float(v) for v in raw if v)
    else:
        schedule = DEFAULT_CONTINUATION
    ts = switch_time(u_max)
    c = u_max * u_max
    v = u_max * ts
    work_star = u_max * u_max * ts * ts
    problem, bv, work_smooth = _block_move_problem(u_max, eps)
    stages = tuple(_block_move_problem(u_max, e)[:2]
                   for e in sorted(schedule, reverse=True) if e > eps)

    def ref_control(t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        return np.where(t < ts, u_max, np.where(t > 1.0 - ts, -u_max, 0.0))[None, :]

    def ref_state(t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        s = 1.0 - t
        x1 = np.where(t < ts, 0.5 * u_max * t * t,
                      np.where(t > 1 - ts, 1.0 - 0.5 * u_max * s * s,
                               0.5 * u_max * ts * ts + v * (t - ts)))
        x2 = np.where(t < ts, u_max * t, np.where(t > 1 - ts, u_max * s, v))
        w1 = _smoothed_ramp_work(np.minimum(t, ts), c, eps)
        w_ts = _smoothed_ramp_work(ts, c, eps)
        x3 = np.where(t < ts, w1,
                      np.where(t > 1 - ts,
                               w_ts + eps * (1 - 2 * ts) + w_ts
                               - _smoothed_ramp_work(np.clip(s, 0.0, ts), c, eps),
                               w_ts + eps * (t - ts)))
        return np.stack([x1, x2, x3])

    def ref_state_deriv(t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        x = ref_state(t)
        u = ref_control(t)[0]
        return np.stack([x[1], u, np.sqrt((u * x[1]) ** 2 + eps ** 2)])

    ref = Reference(ref_state, ref_state_deriv, ref_control, events=(ts, 1.0 - ts))
    return BenchmarkCase(problem, bv,
                         MeshConfig(8, phi=0.5, deg_state=2, deg_control=1, quad_order=5),
                         ref, dict(u_max=u_max, smoothing_eps=eps, t_switch=ts,
                                   work=work_star, work_smoothed=work_smooth,
                                   continuation=tuple(sorted(schedule, reverse=True))),
                         stages)


SATELLITE_REQUIRED = ("inertia_xx", "inertia_yy", "inertia_zz")


def axis_angle_quaternion(axis, angle_deg):
    """Unit quaternion ``(q1, q2, q3, q4)``, vector part first."""
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    half = 0.5 * np.radians(angle_deg)
    return np.concatenate([np.sin(half) * axis, [np.cos(half)]])


def satellite(config=None):
    """Rest-to-rest reorientation of a rigid spacecraft, DAE form.

    States ``(q1, q2, q3, q4, w1, w2, w3)``, controls are body torques.
    Eight residual rows: four quaternion kinematics rows, three Euler rows
    and the algebraic unit-norm row ``|q|^2 - 1``.
    """
    sec = _section(config, "satellite")
    missing = [k for k in SATELLITE_REQUIRED if k not in sec]
    if missing:
        raise ConfigurationError(
            "satellite configuration is missing required keys: " + ", ".join(missing))
    Ixx, Iyy, Izz = (float(sec[k]) for k in SATELLITE_REQUIRED)
    u_max = _get(sec, "u_max", 50.0)
    tf = _get(sec, "tf", 28.630408)
    angle = _get(sec, "rotation_deg", 150.0)

    def dynamics(xd, x, u, t):
        q1, q2, q3, q4, w1, w2, w3 = (x[k] for k in range(7))
        return [
            xd[0] - 0.5 * (w1 * q4 - w2 * q3 + w3 * q2),
            xd[1] - 0.5 * (w1 * q3 + w2 * q4 - w3 * q1),
            xd[2] - 0.5 * (-w1 * q2 + w2 * q1 + w3 * q4),
            xd[3] - 0.5 * (-w1 * q1 - w2 * q2 - w3 * q3),
            xd[4] - (u[0] - (Izz - Iyy) * w2 * w3) / Ixx,
            xd[5] - (u[1] - (Ixx - Izz) * w3 * w1) / Iyy,
            xd[6] - (u[2] - (Iyy - Ixx) * w1 * w2) / Izz,
            q1 * q1 + q2 * q2 + q3 * q3 + q4 * q4 - 1.0,
        ]

    def path(xd, x, u, t):
        return [u[0] - u_max, u[1] - u_max, u[2] - u_max,
                -u[0] - u_max, -u[1] - u_max, -u[2] - u_max]

    q0 = np.array([0.0, 0.0, 0.0, 1.0])
    qf = axis_angle_quaternion([1.0, 0.0, 0.0], angle)
    bv = BoundaryValues(x0=np.concatenate([q0, np.zeros(3)]),
                        xf=np.concatenate([qf, np.zeros(3)]))
    problem = DynamicsProblem(n_x=7, n_u=3, n_f=8, n_g=6, t0=0.0, tf=tf,
                              dynamics=dynamics, path=path, name="satellite")
    return BenchmarkCase(problem, bv,
                         MeshConfig(15, phi=0.5, deg_state=4, deg_control=1, quad_order=7),
                         None, dict(inertia=(Ixx, Iyy, Izz), u_max=u_max, tf=tf,
                                    rotation_deg=angle))


def zero_dynamics(config=None):
    """Toy problem with ``F = 0``: every trajectory is a solution."""
    problem = DynamicsProblem(n_x=1, n_u=0, n_f=1, t0=0.0, tf=1.0,
                              dynamics=lambda xd, x, u, t: [0.0 * x[0]],
                              name="zero_dynamics")
    return BenchmarkCase(problem, BoundaryValues(x0=[1.0]),
                         MeshConfig(4, deg_state=2, quad_order=3), None, {})


BENCHMARKS = {
    "exp_decay": exp_decay,
    "block_move": block_move,
    "satellite": satellite,
    "zero_dynamics": zero_dynamics,
}


def get(name, config=None):
    try:
        factory = BENCHMARKS[name]
    except KeyError:
        raise KeyError(f"unknown problem {name!r}; known: {', '.join(BENCHMARKS)}") from None
    return factory(config=config)
