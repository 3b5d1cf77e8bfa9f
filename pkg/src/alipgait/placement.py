"""Lateral foot placement from predicted end-of-next-step momentum.

For a frontal state partway through a step, two candidate lateral foot
offsets are propagated through the rest of the step, the foot swap and the
whole next step.  The desired offset follows from linear interpolation of
the predicted pre-impact momentum (or angle).  A precomputed table makes
the online query constant time.
"""
from __future__ import annotations

import logging
import math
import struct
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import kernels
from .alip import AlipState, RobotParams
from .bezier import evaluate
from .errors import (
    ConfigurationError,
    DegenerateSlopeError,
    GeometryError,
    ParameterError,
    TrajectoryParseError,
)
from .trajectory import NominalTrajectory

log = logging.getLogger(__name__)

__all__ = [
    "PlacementQuery",
    "PlacementConfig",
    "Axis",
    "LookupTable",
    "predict_next_step_end",
    "predict_next_step_end_L",
    "interpolate_lateral",
    "interpolate_lateral_theta",
    "nominal_end_momentum",
    "desired_momentum",
    "plan_placement",
    "placement_slope",
    "default_axes",
    "orbit_reference",
    "build_lookup_table",
    "lut_query",
    "save_lut",
    "load_lut",
    "dumps_lut",
    "loads_lut",
]

LUT_MAGIC = b"ALUT"
LUT_VERSION = 1
DEGENERATE_EPS = 1e-12


@dataclass(frozen=True)
class PlacementQuery:
    state: AlipState
    phase_time: float
    L_des: float


@dataclass(frozen=True)
class PlacementConfig:
    """Candidate spacing and the kinematic clamp on the lateral offset.

    The clamp is absolute (m, along the stance-to-swing direction of the
    mirrored frame).  When left as None it spans the nominal offset +-1 m.
    """

    delta: float = 0.02
    y_min: Optional[float] = None
    y_max: Optional[float] = None

    def bounds(self, traj: NominalTrajectory):
        y = traj.step_width
        lo = y - 1.0 if self.y_min is None else self.y_min
        hi = y + 1.0 if self.y_max is None else self.y_max
        if not lo < hi:
            raise ParameterError(f"empty placement range [{lo}, {hi}]")
        return lo, hi


def _frontal(traj: NominalTrajectory):
    if not traj.has_frontal:
        raise ConfigurationError(f"trajectory {traj.name!r} has no frontal curves")
    return traj.coefficients("r_c_frontal")


def predict_next_step_end(x0: AlipState, t0: float, y_candidate: float,
                          traj: NominalTrajectory, params: RobotParams,
                          dt: Optional[float] = None) -> AlipState:
    """Frontal state at the end of the next step, just before its impact.

    The state is propagated torque-free from `t0` to the end of the current
    step, swapped onto a foot placed `y_candidate` away, and propagated
    through one more full step.  At ``t0 == T`` only the swap and the full
    step remain.
    """
    dt = traj.dt if dt is None else dt
    if not dt > 0:
        raise ParameterError(f"dt must be positive, got {dt}")
    if not (0.0 <= t0 <= traj.T):
        raise ParameterError(f"t0={t0} outside [0, {traj.T}]")
    rc = _frontal(traj)
    buf = np.empty(rc.shape[0])
    th, L, ok = kernels.predict_end(x0.theta_c, x0.L, t0, y_candidate, traj.T, params.m,
                                    params.g, rc, traj.step_height, dt, buf)
    if not ok:
        raise GeometryError(f"impact infeasible for lateral candidate {y_candidate}",
                            value=(th, L), candidate=y_candidate)
    return AlipState(th, L)


def predict_next_step_end_L(x0, t0, y_candidate, traj, params, dt=None) -> float:
    """Pre-impact angular momentum at the end of the next step."""
    return predict_next_step_end(x0, t0, y_candidate, traj, params, dt).L


def interpolate_lateral(y1, L1, y2, L2, L_des, eps: float = DEGENERATE_EPS) -> float:
    """Secant placement through (y1, L1) and (y2, L2) hitting L_des."""
    if y1 == y2:
        raise ParameterError("candidate offsets must differ")
    if abs(L2 - L1) < eps:
        raise DegenerateSlopeError(f"|L2 - L1| = {abs(L2 - L1):.3e} below {eps}")
    # multiply before dividing so the end and mid identities stay exact
    return y1 + (L_des - L1) * (y2 - y1) / (L2 - L1)


def interpolate_lateral_theta(y1, th1, y2, th2, th_des, eps: float = DEGENERATE_EPS) -> float:
    """Same secant with the end-of-step CoM angle as the target."""
    if y1 == y2:
        raise ParameterError("candidate offsets must differ")
    if abs(th2 - th1) < eps:
        raise DegenerateSlopeError(f"|theta2 - theta1| = {abs(th2 - th1):.3e} below {eps}")
    return y1 + (th_des - th1) * (y2 - y1) / (th2 - th1)


def nominal_end_momentum(traj: NominalTrajectory) -> float:
    """Pre-impact frontal momentum of the nominal orbit."""
    return evaluate(traj.curves["L_frontal_nom"], 1.0)


def desired_momentum(traj: NominalTrajectory, params: RobotParams,
                     commanded_speed: Optional[float] = None,
                     speed_gain: float = 0.05) -> float:
    """Target pre-impact frontal momentum.

    The nominal orbit's value, shifted by ``gain * m * H * (v_cmd - v_nom)``
    when a commanded speed is given.  In the mirrored stance frame the same
    target serves both legs.
    """
    L = nominal_end_momentum(traj)
    if commanded_speed is not None:
        L += speed_gain * params.m * traj.height * (commanded_speed - traj.nominal_speed)
    return L


def _plan(q: PlacementQuery, traj, params, dt, config):
    rc = _frontal(traj)
    lo, hi = config.bounds(traj)
    buf = np.empty(rc.shape[0])
    return kernels.plan(q.state.theta_c, q.state.L, q.phase_time, q.L_des,
                        traj.step_width, config.delta, lo, hi, traj.T, params.m,
                        params.g, rc, traj.step_height, dt, buf)


def plan_placement(q: PlacementQuery, traj: NominalTrajectory, params: RobotParams,
                   dt: Optional[float] = None,
                   config: PlacementConfig = PlacementConfig()) -> float:
    """Lateral offset whose predicted end-of-next-step momentum is q.L_des.

    Candidates are the nominal offset and the nominal plus ``config.delta``.
    If either prediction is infeasible or the two agree too closely to
    define a slope, the nominal offset is returned and a warning logged.
    """
    dt = traj.dt if dt is None else dt
    if not (0.0 <= q.phase_time <= traj.T):
        raise ParameterError(f"phase_time {q.phase_time} outside [0, {traj.T}]")
    y, status = _plan(q, traj, params, dt, config)
    if status == kernels.FALLBACK:
        log.warning("placement fell back to nominal at theta=%g L=%g t=%g",
                    q.state.theta_c, q.state.L, q.phase_time)
    return y


def placement_slope(traj: NominalTrajectory, params: RobotParams,
                    config: PlacementConfig = PlacementConfig(), dt=None) -> float:
    """dL_end/dy at the start of the nominal step (kg m^2/s per m)."""
    x0 = traj.frontal_state(0.0)
    y1 = traj.step_width
    L1 = predict_next_step_end_L(x0, 0.0, y1, traj, params, dt)
    L2 = predict_next_step_end_L(x0, 0.0, y1 + config.delta, traj, params, dt)
    return (L2 - L1) / config.delta


# ---------------------------------------------------------------------------
# lookup table


@dataclass(frozen=True)
class Axis:
    start: float
    step: float
    count: int

    def __post_init__(self):
        if int(self.count) < 2:
            raise ParameterError("axis needs at least two nodes")
        if not (self.step > 0 and math.isfinite(self.step) and math.isfinite(self.start)):
            raise ParameterError("axis step must be positive and finite")
        object.__setattr__(self, "count", int(self.count))
        object.__setattr__(self, "start", float(self.start))
        object.__setattr__(self, "step", float(self.step))

    @classmethod
    def span(cls, lo, hi, count):
        return cls(lo, (hi - lo) / (count - 1), count)

    @property
    def stop(self):
        return self.start + (self.count - 1) * self.step

    def nodes(self):
        return self.start + self.step * np.arange(self.count)


class LookupTable:
    """Dense y_des grid over (theta, L, phase) with trilinear queries.

    With a `reference` (theta and L sampled at each phase node) the theta
    and L axes are offsets from that reference, linearly interpolated in
    phase, so the grid follows the nominal orbit as a tube.  Without one
    the axes are absolute.
    """

    def __init__(self, axes: Sequence[Axis], values, reference=None,
                 n_fallback: int = 0, n_clamped: int = 0):
        if len(axes) != 3:
            raise ParameterError("a lookup table has exactly three axes")
        values = np.ascontiguousarray(values, dtype=np.float64).ravel()
        n = axes[0].count * axes[1].count * axes[2].count
        if values.shape[0] != n:
            raise ParameterError(f"expected {n} values, got {values.shape[0]}")
        if not np.all(np.isfinite(values)):
            raise ParameterError("lookup values must be finite")
        npha = axes[2].count
        if reference is None:
            ref_th, ref_L = np.zeros(npha), np.zeros(npha)
        else:
            ref_th = np.ascontiguousarray(reference[0], dtype=np.float64)
            ref_L = np.ascontiguousarray(reference[1], dtype=np.float64)
            if ref_th.shape != (npha,) or ref_L.shape != (npha,):
                raise ParameterError("reference needs one theta and one L per phase node")
            if not (np.all(np.isfinite(ref_th)) and np.all(np.isfinite(ref_L))):
                raise ParameterError("reference must be finite")
        self.axes = tuple(axes)
        self.values = values
        self.relative = reference is not None
        self.ref_theta = ref_th
        self.ref_L = ref_L
        for a in (self.values, self.ref_theta, self.ref_L):
            a.setflags(write=False)
        self._ax = np.array([v for a in axes for v in (a.start, a.step, float(a.count))])
        self.n_fallback = n_fallback
        self.n_clamped = n_clamped

    @property
    def shape(self):
        return tuple(a.count for a in self.axes)

    def grid(self) -> np.ndarray:
        return self.values.reshape(self.shape)

    def node_state(self, i, j, k) -> AlipState:
        """Absolute frontal state of grid node (i, j, k)."""
        a0, a1 = self.axes[0], self.axes[1]
        return AlipState(self.ref_theta[k] + (a0.start + a0.step * i),
                         self.ref_L[k] + (a1.start + a1.step * j))

    def node_phase(self, k) -> float:
        a = self.axes[2]
        return a.start + a.step * k

    def contains(self, theta, L, phase) -> bool:
        """True when the query needs no clamping."""
        a0, a1, a2 = self.axes
        if not a2.start <= phase <= a2.stop:
            return False
        f = (phase - a2.start) / a2.step
        k = min(int(f), a2.count - 2)
        c = f - k
        th = theta - ((1 - c) * self.ref_theta[k] + c * self.ref_theta[k + 1])
        Lr = L - ((1 - c) * self.ref_L[k] + c * self.ref_L[k + 1])
        return a0.start <= th <= a0.stop and a1.start <= Lr <= a1.stop

    def __call__(self, theta, L, phase):
        return kernels.lut_interp(self.values, self._ax, self.ref_theta, self.ref_L,
                                  theta, L, phase)


def lut_query(lut: LookupTable, state: AlipState, phase_time: float) -> float:
    """Trilinear lookup; queries outside the grid clamp to its faces."""
    return kernels.lut_interp(lut.values, lut._ax, lut.ref_theta, lut.ref_L,
                              state.theta_c, state.L, phase_time)


def default_axes(traj: NominalTrajectory, n_theta=41, n_L=41, n_phase=21,
                 theta_margin=0.1, L_fraction=0.5):
    """Offsets around the nominal frontal orbit.

    theta spans +-theta_margin rad and L spans +-L_fraction of the largest
    nominal |L| over the step; phase covers the whole step.
    """
    s = np.linspace(0.0, 1.0, 201)
    Lmag = max(abs(evaluate(traj.curves["L_frontal_nom"], v)) for v in s)
    dL = L_fraction * Lmag
    return (Axis.span(-theta_margin, theta_margin, n_theta),
            Axis.span(-dL, dL, n_L),
            Axis.span(0.0, traj.T, n_phase))


def orbit_reference(traj: NominalTrajectory, phase_axis: Axis):
    """Nominal frontal theta and L at each phase node."""
    ph = np.minimum(phase_axis.nodes() / traj.T, 1.0)
    th = np.array([evaluate(traj.curves["theta_frontal_nom"], s) for s in ph])
    L = np.array([evaluate(traj.curves["L_frontal_nom"], s) for s in ph])
    return th, L


def _fill_fallbacks(values, status, shape):
    """Replace fallback nodes with the nearest feasible node (grid BFS)."""
    bad = (status == kernels.FALLBACK).reshape(shape)
    if not bad.any():
        return values
    vals = values.reshape(shape).copy()
    good = ~bad
    if not good.any():
        return values
    filled = good.copy()
    frontier = deque(zip(*np.nonzero(good)))
    nbrs = [(1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)]
    while frontier:
        i, j, k = frontier.popleft()
        for di, dj, dk in nbrs:
            a, b, c = i + di, j + dj, k + dk
            if 0 <= a < shape[0] and 0 <= b < shape[1] and 0 <= c < shape[2] \
                    and not filled[a, b, c]:
                vals[a, b, c] = vals[i, j, k]
                filled[a, b, c] = True
                frontier.append((a, b, c))
    return vals.ravel()


def build_lookup_table(traj: NominalTrajectory, params: RobotParams, axes=None,
                       L_des: Optional[float | Callable] = None, dt: Optional[float] = None,
                       config: PlacementConfig = PlacementConfig(),
                       relative: bool = True) -> LookupTable:
    """Evaluate plan_placement on every grid node.

    `L_des` may be a number, a callable ``f(traj, params)``, or None for the
    nominal pre-impact frontal momentum.  With ``relative=True`` (default)
    the theta and L axes are offsets from the nominal frontal orbit.  Nodes
    where prediction fails take the value of the nearest successful node;
    the count is kept on the table as ``n_fallback``.
    """
    dt = traj.dt if dt is None else dt
    axes = default_axes(traj) if axes is None else tuple(axes)
    if axes[2].stop > traj.T * (1 + 1e-12) or axes[2].start < 0:
        raise ParameterError("phase axis must lie inside [0, T]")
    if L_des is None:
        L_des = nominal_end_momentum(traj)
    elif callable(L_des):
        L_des = float(L_des(traj, params))
    rc = _frontal(traj)
    lo, hi = config.bounds(traj)
    if relative:
        ref = orbit_reference(traj, axes[2])
    else:
        ref = (np.zeros(axes[2].count), np.zeros(axes[2].count))
    n = axes[0].count * axes[1].count * axes[2].count
    out = np.empty(n)
    status = np.empty(n, dtype=np.int64)
    kernels.build_table(axes[0].nodes(), axes[1].nodes(), np.minimum(axes[2].nodes(), traj.T),
                        ref[0], ref[1], float(L_des), traj.step_width, config.delta, lo, hi,
                        traj.T, params.m, params.g, rc, traj.step_height, dt, out, status)
    n_fb = int(np.sum(status == kernels.FALLBACK))
    n_cl = int(np.sum(status == kernels.CLAMPED))
    if n_fb:
        log.warning("%d of %d table nodes fell back to a neighbour", n_fb, n)
        out = _fill_fallbacks(out, status, tuple(a.count for a in axes))
    return LookupTable(axes, out, reference=ref if relative else None,
                       n_fallback=n_fb, n_clamped=n_cl)


_HEAD = struct.Struct("<4sB")
_AXIS = struct.Struct("<ddI")
# Version 1 is the plain layout with absolute axes.  Version 2 appends the
# orbit reference (theta then L at each phase node) after the values.
_VERSION_RELATIVE = 2


def dumps_lut(lut: LookupTable) -> bytes:
    version = _VERSION_RELATIVE if lut.relative else LUT_VERSION
    parts = [_HEAD.pack(LUT_MAGIC, version)]
    parts += [_AXIS.pack(a.start, a.step, a.count) for a in lut.axes]
    parts.append(lut.values.astype("<f8").tobytes())
    if lut.relative:
        parts.append(lut.ref_theta.astype("<f8").tobytes())
        parts.append(lut.ref_L.astype("<f8").tobytes())
    return b"".join(parts)


def loads_lut(data: bytes) -> LookupTable:
    if len(data) < _HEAD.size + 3 * _AXIS.size:
        raise TrajectoryParseError("lookup table file is truncated")
    magic, version = _HEAD.unpack_from(data, 0)
    if magic != LUT_MAGIC or version not in (LUT_VERSION, _VERSION_RELATIVE):
        raise TrajectoryParseError(f"bad lookup table header {magic!r} v{version}")
    off = _HEAD.size
    axes = []
    for _ in range(3):
        axes.append(Axis(*_AXIS.unpack_from(data, off)))
        off += _AXIS.size
    n = axes[0].count * axes[1].count * axes[2].count
    npha = axes[2].count
    extra = 16 * npha if version == _VERSION_RELATIVE else 0
    if len(data) - off != 8 * n + extra:
        raise TrajectoryParseError(f"expected {8 * n + extra} payload bytes, got {len(data) - off}")
    vals = np.frombuffer(data, dtype="<f8", count=n, offset=off).astype(np.float64)
    ref = None
    if version == _VERSION_RELATIVE:
        off += 8 * n
        th = np.frombuffer(data, dtype="<f8", count=npha, offset=off).astype(np.float64)
        L = np.frombuffer(data, dtype="<f8", count=npha, offset=off + 8 * npha).astype(np.float64)
        ref = (th, L)
    return LookupTable(axes, vals, reference=ref)


def save_lut(lut: LookupTable, path) -> None:
    Path(path).write_bytes(dumps_lut(lut))


def load_lut(path) -> LookupTable:
    return loads_lut(Path(path).read_bytes())
