"""Variable-length ALIP state, continuous dynamics and Euler integration.

The pendulum is a point mass at distance r_c from the stance contact,
leaning theta_c from vertical.  L is the angular momentum about the
contact point, unnormalized (kg m^2/s), and the ankle torque u acts as a
moment about the same point::

    theta_dot = L / (m r_c^2)
    L_dot     = m g r_c sin(theta_c) + u
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .bezier import BezierCurve, derivative, evaluate
from .errors import GeometryError, InvalidStateError, ParameterError, PropagationError

__all__ = [
    "AlipState",
    "RobotParams",
    "PendulumProfile",
    "dynamics",
    "com_position",
    "com_velocity",
    "euler_step",
    "euler_schedule",
    "integrate_phase",
]


@dataclass(frozen=True)
class AlipState:
    """CoM angle from vertical (rad) and angular momentum about the contact."""

    theta_c: float
    L: float

    def __post_init__(self):
        th, L = float(self.theta_c), float(self.L)
        if not (math.isfinite(th) and math.isfinite(L)):
            raise InvalidStateError(f"non-finite state ({th}, {L})")
        object.__setattr__(self, "theta_c", th)
        object.__setattr__(self, "L", L)

    def as_array(self):
        return np.array([self.theta_c, self.L])


@dataclass(frozen=True)
class RobotParams:
    m: float = 32.0
    g: float = 9.81

    def __post_init__(self):
        if not (self.m > 0 and math.isfinite(self.m)):
            raise ParameterError(f"mass must be positive, got {self.m}")
        if not (self.g > 0 and math.isfinite(self.g)):
            raise ParameterError(f"gravity must be positive, got {self.g}")


class PendulumProfile:
    """Pendulum length as a Bezier curve in normalized phase.

    Positivity of every control point guarantees r_c(s) > 0 on [0, 1]
    (convex hull property), so that is what the constructor checks.
    """

    __slots__ = ("r_c", "_dr")

    def __init__(self, r_c: BezierCurve):
        if min(r_c.coefficients) <= 0.0:
            raise GeometryError("pendulum length control points must be positive",
                                value=min(r_c.coefficients))
        self.r_c = r_c
        self._dr = derivative(r_c)

    def length(self, s: float) -> float:
        return evaluate(self.r_c, s)

    def rate(self, s: float, T: float) -> float:
        """dr_c/dt at phase s for a step of duration T."""
        return evaluate(self._dr, s) / T

    def __repr__(self):
        return f"PendulumProfile({self.r_c!r})"


def dynamics(t, x: AlipState, params: RobotParams, profile: PendulumProfile,
             T: float, u: float = 0.0):
    """Time derivative (theta_dot, L_dot) of the ALIP state at time `t`."""
    if not T > 0:
        raise ParameterError(f"step duration must be positive, got {T}")
    if not (math.isfinite(t) and math.isfinite(u)):
        raise InvalidStateError(f"non-finite input t={t}, u={u}")
    s = t / T
    if 1.0 < s <= 1.0 + 1e-12:
        s = 1.0
    r = profile.length(s)
    if r <= 0.0:
        raise GeometryError(f"pendulum length {r} is not positive", value=r)
    m = params.m
    return (x.L / (m * r * r), m * params.g * r * math.sin(x.theta_c) + u)


def com_position(r_c: float, theta_c: float):
    """CoM (x, z) relative to the contact point."""
    if not r_c > 0:
        raise GeometryError(f"pendulum length {r_c} is not positive", value=r_c)
    return (r_c * math.sin(theta_c), r_c * math.cos(theta_c))


def com_velocity(r_c: float, r_dot: float, theta_c: float, theta_dot: float):
    """CoM velocity (vx, vz) from the polar rates."""
    if not r_c > 0:
        raise GeometryError(f"pendulum length {r_c} is not positive", value=r_c)
    s, c = math.sin(theta_c), math.cos(theta_c)
    return (r_c * c * theta_dot + r_dot * s, -r_c * s * theta_dot + r_dot * c)


def euler_step(f: Callable, t_n: float, x_n: AlipState, dt: float) -> AlipState:
    """One explicit Euler step ``x_n + dt * f(t_n, x_n)``."""
    if not dt > 0:
        raise ParameterError(f"dt must be positive, got {dt}")
    d_th, d_L = f(t_n, x_n)
    th = x_n.theta_c + dt * d_th
    L = x_n.L + dt * d_L
    if not (math.isfinite(th) and math.isfinite(L)):
        raise PropagationError(f"non-finite state after step at t={t_n}", t=t_n)
    return AlipState(th, L)


def euler_schedule(t0: float, t_end: float, dt: float):
    """Substep start times and lengths from t0 to t_end.

    Regular steps start at ``t0 + k*dt``; the last one is truncated so the
    schedule lands on `t_end` exactly.  A remainder shorter than 1e-9 dt
    is absorbed into the previous step rather than taken separately.
    """
    span = t_end - t0
    if span <= 0.0:
        return []
    n = int(math.ceil(span / dt - 1e-9))
    out = []
    for k in range(n):
        tk = t0 + k * dt
        h = dt if k < n - 1 else t_end - tk
        out.append((tk, h))
    return out


def integrate_phase(x0: AlipState, t0: float, t_end: float, dt: float,
                    params: RobotParams, profile: PendulumProfile, T: float,
                    torque_schedule: Optional[Callable[[float], float]] = None):
    """Euler-integrate from `t0` to `t_end`.

    Returns
    -------
    times : ndarray, shape (n,)
    states : list of AlipState, length n
        ``states[0]`` is `x0` and ``times[-1] == t_end``.
    """
    if not dt > 0:
        raise ParameterError(f"dt must be positive, got {dt}")
    if t_end < t0:
        raise ParameterError("t_end must not precede t0")
    times = [t0]
    states = [x0]
    x = x0
    for tk, h in euler_schedule(t0, t_end, dt):
        u = 0.0 if torque_schedule is None else torque_schedule(tk)
        x = euler_step(lambda t, s: dynamics(t, s, params, profile, T, u), tk, x, h)
        times.append(tk + h)
        states.append(x)
    times[-1] = t_end
    return np.array(times), states
