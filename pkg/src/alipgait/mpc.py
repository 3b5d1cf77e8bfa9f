"""Sagittal ankle-torque MPC about a nominal trajectory.

The ALIP is linearized along the nominal step, one explicit-Euler substep
per stage, with the Jacobian of the foot-swap map inserted wherever the
horizon crosses a step end.  Working in deviations from the nominal makes
the affine terms cancel, so the QP only sees the transition matrices.  The
condensed problem is a box QP in the torque sequence.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import kernels
from .alip import AlipState, RobotParams, dynamics
from .errors import ConfigurationError, GeometryError, ParameterError
from .impact import FootDisplacement, hybrid_impact
from .trajectory import NominalTrajectory

__all__ = [
    "MpcConfig",
    "LinearizedStep",
    "MpcResult",
    "MpcSolver",
    "linearize_dynamics",
    "linearize_impact",
    "solve_ankle_mpc",
]


def _psd(M, name):
    M = np.asarray(M, dtype=float)
    if M.shape != (2, 2) or not np.all(np.isfinite(M)):
        raise ParameterError(f"{name} must be a finite 2x2 matrix")
    if not np.allclose(M, M.T, rtol=0, atol=1e-12):
        raise ParameterError(f"{name} must be symmetric")
    if np.min(np.linalg.eigvalsh(M)) < -1e-12:
        raise ParameterError(f"{name} must be positive semidefinite")
    return M


@dataclass(frozen=True)
class MpcConfig:
    """Horizon, weights and torque bound.

    The torque limit is the bare number 23, the bound the hardware QP used;
    it is applied as an ankle torque in N m.  The default weights favour the
    angle heavily and the terminal weight defaults to 1000 Q; lighter
    terminal weights leave a slow (or growing) mode in the step-to-step loop.
    """

    horizon_steps: int = 20
    dt_mpc: float = 0.02
    torque_limit: float = 23.0
    Q: np.ndarray = field(default_factory=lambda: np.diag([1000.0, 1.0]))
    R: float = 0.1
    Q_f: Optional[np.ndarray] = None
    max_iter: int = 200
    kkt_tol: float = 1e-8

    def __post_init__(self):
        if int(self.horizon_steps) < 1:
            raise ParameterError("horizon_steps must be at least 1")
        if not self.dt_mpc > 0:
            raise ParameterError("dt_mpc must be positive")
        if not self.torque_limit > 0:
            raise ParameterError("torque_limit must be positive")
        if not self.R > 0:
            raise ParameterError("R must be positive")
        if int(self.max_iter) < 0:
            raise ParameterError("max_iter must be non-negative")
        Q = _psd(self.Q, "Q")
        Qf = 1000.0 * Q if self.Q_f is None else _psd(self.Q_f, "Q_f")
        object.__setattr__(self, "horizon_steps", int(self.horizon_steps))
        object.__setattr__(self, "max_iter", int(self.max_iter))
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "Q_f", Qf)

    @classmethod
    def from_mapping(cls, d):
        """Build from flat keys (Q_theta, Q_L, Qf_theta, Qf_L, ...)."""
        d = dict(d)
        kw = {}
        for k in ("horizon_steps", "max_iter"):
            if k in d:
                kw[k] = int(d.pop(k))
        for k in ("dt_mpc", "torque_limit", "R", "kkt_tol"):
            if k in d:
                kw[k] = float(d.pop(k))
        if "Q_theta" in d or "Q_L" in d:
            kw["Q"] = np.diag([float(d.pop("Q_theta", 1000.0)), float(d.pop("Q_L", 1.0))])
        if "Qf_theta" in d or "Qf_L" in d:
            q = kw.get("Q", np.diag([1000.0, 1.0]))
            kw["Q_f"] = np.diag([float(d.pop("Qf_theta", 1000 * q[0, 0])),
                                 float(d.pop("Qf_L", 1000 * q[1, 1]))])
        if d:
            raise ParameterError(f"unknown MPC settings: {sorted(d)}")
        return cls(**kw)


@dataclass(frozen=True)
class LinearizedStep:
    A: np.ndarray
    B: np.ndarray
    c: np.ndarray


@dataclass
class MpcResult:
    u0: float
    predicted: np.ndarray
    iterations: int
    kkt_residual: float
    converged: bool
    solve_time: float
    u: np.ndarray = None


def _jac(traj, t, params):
    s = min(t / traj.T, 1.0)
    x = traj.nominal_state(s * traj.T)
    r = traj.profile().length(s)
    m = params.m
    return np.array([[0.0, 1.0 / (m * r * r)], [m * params.g * r * math.cos(x.theta_c), 0.0]])


def linearize_dynamics(traj: NominalTrajectory, t: float, dt_mpc: float,
                       params: RobotParams) -> LinearizedStep:
    """One Euler substep about the nominal at time `t`, torque-free.

    ``A x_nom(t) + c`` is the Euler image of the nominal point, so the
    nominal is a trajectory of the linear model with u = 0.
    """
    if not (0.0 <= t <= traj.T):
        raise ParameterError(f"t={t} outside [0, {traj.T}]")
    J = _jac(traj, t, params)
    A = np.eye(2) + dt_mpc * J
    B = np.array([0.0, dt_mpc])
    x = traj.nominal_state(t)
    f = np.array(dynamics(t, x, params, traj.profile(), traj.T, 0.0))
    xn = x.as_array()
    c = xn + dt_mpc * f - A @ xn
    return LinearizedStep(A, B, c)


def _impact(traj, params, th, L):
    P = FootDisplacement(traj.step_length, traj.step_height)
    y = hybrid_impact(AlipState(th, L), traj.profile(), traj.T, P, params)
    return np.array([y.theta_c, y.L])


def linearize_impact(traj: NominalTrajectory, params: RobotParams, h: float = 1e-6):
    """Central-difference Jacobian of the foot swap at the nominal pre-impact state.

    Returns
    -------
    A_imp : ndarray (2, 2)
    c_imp : ndarray (2,)
        Chosen so ``A_imp x_pre + c_imp`` is the exact post-impact state.
    """
    x = traj.nominal_state(traj.T).as_array()
    try:
        y0 = _impact(traj, params, *x)
        A = np.empty((2, 2))
        for j in range(2):
            e = np.zeros(2)
            e[j] = h
            A[:, j] = (_impact(traj, params, *(x + e)) - _impact(traj, params, *(x - e))) / (2 * h)
    except GeometryError as exc:
        raise ConfigurationError(f"impact infeasible at the nominal of {traj.name!r}") from exc
    return A, y0 - A @ x


class MpcSolver:
    """Preallocated solver bound to one trajectory and configuration."""

    def __init__(self, traj: NominalTrajectory, cfg: MpcConfig = MpcConfig(),
                 params: RobotParams = RobotParams()):
        self.traj, self.cfg, self.params = traj, cfg, params
        self.A_imp, self.c_imp = linearize_impact(traj, params)
        self._th = traj.coefficients("theta_c_nom")
        self._L = traj.coefficients("L_nom")
        self._rc = traj.coefficients("r_c")
        N = cfg.horizon_steps
        self._buf = np.empty(max(len(self._th), len(self._rc), len(self._L)))
        self._As = np.zeros((N, 2, 2))
        self._Bs = np.zeros((N, 2))
        self._phases = np.zeros(N + 1)
        self._Phi = np.zeros((N + 1, 2, 2))
        self._G = np.zeros((N + 1, 2, N))
        self._H = np.zeros((N, N))
        self._q = np.zeros(N)
        self._u = np.zeros(N)
        self._grad = np.zeros(N)
        self._d = np.zeros(N)
        self._Hd = np.zeros(N)
        self._Lc = np.zeros((N, N))
        self._free = np.zeros(N, dtype=np.int64)
        self._ubuf = np.zeros(N)
        self._pred = np.zeros((N + 1, 2))
        self._hist = np.zeros(cfg.max_iter + 1)
        self._dx = np.zeros(2)
        self._Qf = np.ascontiguousarray(cfg.Q_f)
        self._Q = np.ascontiguousarray(cfg.Q)

    def _nominal(self, phase):
        s = min(max(phase / self.traj.T, 0.0), 1.0)
        return (kernels.bez(self._th, s, self._buf), kernels.bez(self._L, s, self._buf))

    def solve(self, x: AlipState, phase_time: float) -> MpcResult:
        T = self.traj.T
        if not (0.0 <= phase_time <= T):
            raise ParameterError(f"phase_time {phase_time} outside [0, {T}]")
        t0 = time.perf_counter()
        th_n, L_n = self._nominal(phase_time)
        self._dx[0] = x.theta_c - th_n
        self._dx[1] = x.L - L_n
        cfg = self.cfg
        it, kkt, conv = kernels.mpc_solve(
            self._dx, phase_time, T, self.params.m, self.params.g, self._th, self._rc,
            self.A_imp, cfg.horizon_steps, cfg.dt_mpc, cfg.torque_limit, self._Q, self._Qf,
            cfg.R, cfg.max_iter, cfg.kkt_tol, self._As, self._Bs, self._phases, self._Phi,
            self._G, self._H, self._q, self._u, self._grad, self._d, self._Hd, self._Lc,
            self._free, self._ubuf,
            self._pred, self._hist, self._buf)
        elapsed = time.perf_counter() - t0
        u0 = float(self._u[0])
        lim = cfg.torque_limit
        assert -lim <= u0 <= lim
        pred = self._pred.copy()
        for k in range(cfg.horizon_steps + 1):
            a, b = self._nominal(self._phases[k])
            pred[k, 0] += a
            pred[k, 1] += b
        return MpcResult(u0, pred, int(it), float(kkt), bool(conv), elapsed, self._u.copy())

    def torque(self, x: AlipState, phase_time: float):
        """Fast path: (u0, converged) without building the predicted sequence."""
        T = self.traj.T
        th_n, L_n = self._nominal(phase_time)
        self._dx[0] = x.theta_c - th_n
        self._dx[1] = x.L - L_n
        cfg = self.cfg
        it, kkt, conv = kernels.mpc_solve(
            self._dx, phase_time, T, self.params.m, self.params.g, self._th, self._rc,
            self.A_imp, cfg.horizon_steps, cfg.dt_mpc, cfg.torque_limit, self._Q, self._Qf,
            cfg.R, cfg.max_iter, cfg.kkt_tol, self._As, self._Bs, self._phases, self._Phi,
            self._G, self._H, self._q, self._u, self._grad, self._d, self._Hd, self._Lc,
            self._free, self._ubuf,
            self._pred, self._hist, self._buf)
        return float(self._u[0]), bool(conv)

    def cost_history(self, iterations: int) -> np.ndarray:
        """QP objective after each iteration of the last solve."""
        return self._hist[: iterations + 1].copy()

    def qp(self):
        """Condensed (H, q) of the last solve."""
        return self._H.copy(), self._q.copy()


def solve_ankle_mpc(x: AlipState, phase_time: float, traj: NominalTrajectory,
                    cfg: MpcConfig = MpcConfig(), params: RobotParams = RobotParams(),
                    solver: Optional[MpcSolver] = None) -> MpcResult:
    """Ankle torque for the sagittal state `x` at `phase_time` into the step.

    Pass a `solver` built for the same trajectory to reuse its workspace.
    """
    if solver is None:
        solver = MpcSolver(traj, cfg, params)
    return solver.solve(x, phase_time)
