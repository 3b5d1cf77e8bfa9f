import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from alipgait.alip import AlipState, dynamics, euler_step
from alipgait.errors import ParameterError
from alipgait.impact import FootDisplacement, hybrid_impact
from alipgait.mpc import (
    MpcConfig,
    MpcSolver,
    linearize_dynamics,
    linearize_impact,
    solve_ankle_mpc,
)


@pytest.fixture(scope="module")
def solver(flat, params):
    return MpcSolver(flat, MpcConfig(), params)


def test_config_defaults_and_validation():
    c = MpcConfig()
    assert c.horizon_steps == 20 and c.dt_mpc == 0.02 and c.torque_limit == 23.0
    assert np.array_equal(c.Q_f, 1000.0 * c.Q)
    for bad in (dict(horizon_steps=0), dict(dt_mpc=0.0), dict(torque_limit=-1.0), dict(R=0.0),
                dict(Q=np.diag([1.0, -1.0])), dict(Q=np.array([[1.0, 0.5], [0.0, 1.0]])),
                dict(Q_f=np.eye(3))):
        with pytest.raises(ParameterError):
            MpcConfig(**bad)


def test_config_from_mapping():
    c = MpcConfig.from_mapping({"Q_theta": 5, "Q_L": 2, "R": 0.5, "horizon_steps": 3.0})
    assert np.array_equal(c.Q, np.diag([5.0, 2.0])) and c.horizon_steps == 3
    assert np.array_equal(c.Q_f, np.diag([5000.0, 2000.0]))
    c = MpcConfig.from_mapping({"Qf_L": 7})
    assert c.Q_f[1, 1] == 7 and c.Q_f[0, 0] == 1000 * c.Q[0, 0]
    with pytest.raises(ParameterError):
        MpcConfig.from_mapping({"bogus": 1})


def test_linearization_input_column(flat, params):
    step = linearize_dynamics(flat, 0.1, 0.02, params)
    assert np.array_equal(step.B, [0.0, 0.02])


def test_linearization_matches_finite_difference(flat, params):
    t, dt, h = 0.13, 0.02, 1e-7
    step = linearize_dynamics(flat, t, dt, params)
    x = flat.nominal_state(t)
    prof = flat.profile()

    def phi(th, L):
        y = euler_step(lambda tt, s: dynamics(tt, s, params, prof, flat.T), t, AlipState(th, L), dt)
        return y.as_array()

    J = np.column_stack([(phi(x.theta_c + h, x.L) - phi(x.theta_c - h, x.L)) / (2 * h),
                         (phi(x.theta_c, x.L + h) - phi(x.theta_c, x.L - h)) / (2 * h)])
    assert np.max(np.abs(J - step.A)) <= 1e-6


def test_nominal_is_a_trajectory_of_the_linear_model(flat, params):
    t, dt = 0.2, 0.02
    step = linearize_dynamics(flat, t, dt, params)
    x = flat.nominal_state(t)
    f = dynamics(t, x, params, flat.profile(), flat.T)
    expect = x.as_array() + dt * np.array(f)
    assert np.max(np.abs(step.A @ x.as_array() + step.c - expect)) <= 1e-12
    with pytest.raises(ParameterError):
        linearize_dynamics(flat, -0.1, dt, params)


def test_impact_linearization_marching_is_identity(marching, params):
    A, c = linearize_impact(marching, params)
    assert np.max(np.abs(A - np.eye(2))) <= 1e-8
    assert np.max(np.abs(c)) <= 1e-8


def exact_impact(traj, params, x):
    y = hybrid_impact(AlipState(*x), traj.profile(), traj.T,
                      FootDisplacement(traj.step_length, traj.step_height), params)
    return y.as_array()


def test_impact_linearization_construction_and_transport(lib, params):
    rng = np.random.default_rng(3)
    for traj in lib:
        A, c = linearize_impact(traj, params)
        x = traj.nominal_state(traj.T).as_array()
        assert np.max(np.abs(A @ x + c - exact_impact(traj, params, x))) <= 1e-12
        for _ in range(20):
            d = rng.normal(size=2)
            d *= 1e-4 / np.linalg.norm(d)
            err = exact_impact(traj, params, x + d) - (A @ (x + d) + c)
            assert np.max(np.abs(err)) <= 1e-6


def test_impact_partials_flat(flat, params):
    # L row against the analytic derivative of the transfer term, with the
    # new contact length and angle held to the geometry
    A, _ = linearize_impact(flat, params)
    x = flat.nominal_state(flat.T)
    r = flat.profile().length(1.0)
    rd = flat.profile().rate(1.0, flat.T)
    P = flat.step_length
    th, m = x.theta_c, params.m
    # L+ = L + m (Pz (r c thd + rd s) - Px (-r s thd + rd c)),  thd = L/(m r^2)
    Pz = flat.step_height
    dL_dL = 1 + (Pz * math.cos(th) + P * math.sin(th)) / r
    thd = x.L / (m * r * r)
    dL_dth = m * (Pz * (-r * math.sin(th) * thd + rd * math.cos(th))
                  - P * (-r * math.cos(th) * thd - rd * math.sin(th)))
    assert A[1, 1] == pytest.approx(dL_dL, abs=1e-7)
    assert A[1, 0] == pytest.approx(dL_dth, abs=1e-6)
    assert A[0, 1] == pytest.approx(0.0, abs=1e-9)


@pytest.mark.parametrize("phase", [0.0, 0.05, 0.2, 0.39, 0.4])
def test_zero_torque_on_nominal(solver, flat, phase):
    r = solver.solve(flat.nominal_state(phase), phase)
    assert abs(r.u0) <= 1e-9 and r.converged


def test_saturation(solver, flat):
    n = flat.nominal_state(0.1)
    lo = solver.solve(AlipState(n.theta_c + 0.3, n.L + 10), 0.1)
    hi = solver.solve(AlipState(n.theta_c - 0.3, n.L - 10), 0.1)
    assert lo.u0 == -23.0 and hi.u0 == 23.0
    assert lo.converged and hi.converged


@pytest.mark.parametrize("dth,dL", [(0.01, 0.5), (-0.003, 0.2), (0.02, -3.0), (0.2, 5.0)])
def test_single_step_closed_form(flat, params, dth, dL):
    cfg = MpcConfig(horizon_steps=1, Q=np.diag([10.0, 1.0]), Q_f=np.diag([100.0, 10.0]), R=0.1)
    t = 0.1
    n = flat.nominal_state(t)
    x = AlipState(n.theta_c + dth, n.L + dL)
    r = solve_ankle_mpc(x, t, flat, cfg, params)
    step = linearize_dynamics(flat, t, cfg.dt_mpc, params)
    A, B, Qf, R = step.A, step.B, cfg.Q_f, cfg.R
    # deviation from the nominal's own Euler image: A x + c - (A x_nom + c)
    e = A @ np.array([dth, dL])
    u_star = float(np.clip(-(B @ Qf @ e) / (B @ Qf @ B + R), -23, 23))
    assert r.u0 == pytest.approx(u_star, abs=1e-10)
    grid = np.arange(-23.0, 23.0 + 1e-9, 1e-4)
    nxt = e[:, None] + np.outer(B, grid)
    cost = 0.5 * (np.einsum("ik,ij,jk->k", nxt, Qf, nxt) + R * grid**2)
    assert abs(grid[np.argmin(cost)] - u_star) <= 1e-4


def kkt_independent(H, q, u, lim):
    g = H @ u + q
    return np.max(np.abs(u - np.clip(u - g, -lim, lim)))


@given(st.floats(0.0, 0.4), st.floats(-0.1, 0.1), st.floats(-8, 8))
def test_solution_satisfies_kkt(phase, dth, dL):
    from alipgait.trajectory import resolve_library
    flat = resolve_library("default")[0]
    s = _shared_solver(flat)
    n = flat.nominal_state(phase)
    r = s.solve(AlipState(n.theta_c + dth, n.L + dL), phase)
    assert r.converged and r.kkt_residual <= 1e-8
    assert np.all(np.abs(r.u) <= 23.0)
    H, q = s.qp()
    assert kkt_independent(H, q, r.u, 23.0) <= 1e-8 * max(1.0, np.max(np.abs(q)))
    hist = s.cost_history(r.iterations)
    assert np.all(np.diff(hist) <= 1e-9 * max(1.0, abs(hist[0])))
    assert r.predicted[0] == pytest.approx([n.theta_c + dth, n.L + dL], abs=1e-12)


_SOLVERS = {}


def _shared_solver(traj):
    if traj.name not in _SOLVERS:
        _SOLVERS[traj.name] = MpcSolver(traj)
    return _SOLVERS[traj.name]


def test_horizon_crosses_impact(solver, flat):
    # a horizon starting late in the step predicts through the foot swap:
    # three substeps from 0.35 land at 0.01 into the next step
    r = solver.solve(flat.nominal_state(0.35), 0.35)
    assert r.predicted.shape == (21, 2)
    assert r.predicted[3] == pytest.approx(flat.nominal_state(0.01).as_array(), abs=1e-6)


def test_torque_fast_path_matches(solver, flat):
    n = flat.nominal_state(0.12)
    x = AlipState(n.theta_c + 0.02, n.L - 1.0)
    u, conv = solver.torque(x, 0.12)
    assert conv and u == solver.solve(x, 0.12).u0
