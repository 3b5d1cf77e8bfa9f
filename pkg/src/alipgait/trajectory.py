"""Nominal gait trajectories: storage, selection and periodic-orbit synthesis.

A trajectory bundles Bezier curves over the normalized step phase with
its step metadata.  The sagittal pendulum uses ``theta_c_nom``, ``L_nom``
and ``r_c``.  The frontal pendulum, expressed in the current stance leg's
mirrored frame, uses the auxiliary curves ``theta_frontal_nom``,
``L_frontal_nom`` and ``r_c_frontal``.
"""
from __future__ import annotations

import bisect
import math
import types
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from . import kernels
from .alip import AlipState, PendulumProfile, RobotParams, integrate_phase
from .bezier import BezierCurve, evaluate, fit_endpoint_constrained
from .errors import (
    GeometryError,
    NoOrbitError,
    ParameterError,
    TrajectoryParseError,
)
from .impact import FootDisplacement, hybrid_impact

__all__ = [
    "NominalTrajectory",
    "TrajectoryLibrary",
    "PeriodicityReport",
    "GaitDesign",
    "REQUIRED_CURVES",
    "FRONTAL_CURVES",
    "load",
    "resolve_library",
    "save",
    "loads",
    "dumps",
    "select_by_incline",
    "check_periodicity",
    "design_gait",
    "synthesize_nominal",
    "default_library",
]

REQUIRED_CURVES = ("theta_c_nom", "L_nom", "r_c")
FRONTAL_CURVES = ("theta_frontal_nom", "L_frontal_nom", "r_c_frontal")
_CORE_PARAMS = ("incline_deg", "nominal_speed", "T", "mass")
MAGIC = "ALIPTRAJ"
VERSION = 1


def _fmt(x: float) -> str:
    return "%.17g" % x


@dataclass(frozen=True)
class NominalTrajectory:
    """One periodic step, mirrored to obtain the other leg's step."""

    name: str
    incline_deg: float
    nominal_speed: float
    T: float
    curves: Mapping[str, BezierCurve]
    mass: float
    params: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if not self.name or any(ch.isspace() for ch in self.name):
            raise ParameterError(f"trajectory name {self.name!r} must be one word")
        if not (self.T > 0 and math.isfinite(self.T)):
            raise ParameterError(f"step duration must be positive, got {self.T}")
        if not self.mass > 0:
            raise ParameterError(f"mass must be positive, got {self.mass}")
        for key in REQUIRED_CURVES:
            if key not in self.curves:
                raise ParameterError(f"trajectory {self.name!r} lacks curve {key!r}")
        for key in ("r_c", "r_c_frontal"):
            if key in self.curves and min(self.curves[key].coefficients) <= 0.0:
                raise GeometryError(f"curve {key!r} has non-positive control points")
        object.__setattr__(self, "curves", types.MappingProxyType(dict(self.curves)))
        object.__setattr__(self, "params",
                           types.MappingProxyType({k: float(v) for k, v in self.params.items()}))

    # step geometry ---------------------------------------------------------
    @property
    def step_length(self) -> float:
        return self.params.get("step_length", self.nominal_speed * self.T)

    @property
    def step_height(self) -> float:
        return self.params.get("step_height",
                               self.step_length * math.tan(math.radians(self.incline_deg)))

    @property
    def step_width(self) -> float:
        return self.params.get("step_width", 0.0)

    @property
    def height(self) -> float:
        return self.params.get("height", evaluate(self.curves["r_c"], 0.5))

    @property
    def dt(self) -> float:
        return self.params.get("dt", 1e-3)

    @property
    def periodic(self) -> bool:
        return bool(self.params.get("periodic", 0.0))

    @property
    def has_frontal(self) -> bool:
        return all(k in self.curves for k in FRONTAL_CURVES)

    def profile(self) -> PendulumProfile:
        return PendulumProfile(self.curves["r_c"])

    def frontal_profile(self) -> PendulumProfile:
        return PendulumProfile(self.curves["r_c_frontal"])

    def nominal_state(self, t: float) -> AlipState:
        s = t / self.T
        return AlipState(evaluate(self.curves["theta_c_nom"], s),
                         evaluate(self.curves["L_nom"], s))

    def frontal_state(self, t: float) -> AlipState:
        s = t / self.T
        return AlipState(evaluate(self.curves["theta_frontal_nom"], s),
                         evaluate(self.curves["L_frontal_nom"], s))

    def coefficients(self, key: str) -> np.ndarray:
        return self.curves[key].as_array()


class TrajectoryLibrary:
    """Trajectories ordered by design incline.

    The breakpoints are the design inclines of every trajectory but the
    first; an incline selects the last trajectory whose breakpoint it has
    reached.
    """

    def __init__(self, trajectories: Sequence[NominalTrajectory]):
        trajs = tuple(trajectories)
        if not trajs:
            raise ParameterError("a library needs at least one trajectory")
        inc = [t.incline_deg for t in trajs]
        for a, b in zip(inc, inc[1:]):
            if not b > a:
                raise ParameterError(f"inclines must be strictly increasing, got {inc}")
        names = [t.name for t in trajs]
        if len(set(names)) != len(names):
            raise ParameterError(f"duplicate trajectory names in {names}")
        self.trajectories = trajs
        self.breakpoints = tuple(inc[1:])

    def __len__(self):
        return len(self.trajectories)

    def __iter__(self):
        return iter(self.trajectories)

    def __getitem__(self, i):
        return self.trajectories[i]

    def index_of(self, name: str) -> int:
        for i, t in enumerate(self.trajectories):
            if t.name == name:
                return i
        raise KeyError(name)

    def index_for_incline(self, incline_deg: float) -> int:
        return bisect.bisect_right(self.breakpoints, incline_deg)


def select_by_incline(lib: TrajectoryLibrary, incline_deg: float) -> NominalTrajectory:
    """Trajectory whose incline interval contains `incline_deg`."""
    return lib.trajectories[lib.index_for_incline(incline_deg)]


# ---------------------------------------------------------------------------
# text format


def dumps(lib: TrajectoryLibrary) -> str:
    lines = [f"{MAGIC} {VERSION}"]
    for t in lib:
        lines.append(f"trajectory {t.name}")
        core = {"incline_deg": t.incline_deg, "nominal_speed": t.nominal_speed,
                "T": t.T, "mass": t.mass}
        for k in _CORE_PARAMS:
            lines.append(f"param {k} {_fmt(core[k])}")
        for k in sorted(t.params):
            lines.append(f"param {k} {_fmt(t.params[k])}")
        order = list(REQUIRED_CURVES) + sorted(k for k in t.curves if k not in REQUIRED_CURVES)
        for k in order:
            c = t.curves[k].coefficients
            lines.append(f"curve {k} {len(c) - 1} " + " ".join(_fmt(a) for a in c))
    return "\n".join(lines) + "\n"


def save(lib: TrajectoryLibrary, path) -> None:
    Path(path).write_text(dumps(lib))


def _number(tok, lineno, path):
    try:
        v = float(tok)
    except ValueError:
        raise TrajectoryParseError(f"bad number {tok!r}", lineno, path) from None
    if not math.isfinite(v):
        raise TrajectoryParseError(f"non-finite number {tok!r}", lineno, path)
    return v


def _finish(block, path):
    name, params, curves, lineno = block
    p = dict(params)
    missing = [k for k in _CORE_PARAMS if k not in p]
    if missing:
        raise TrajectoryParseError(f"trajectory {name!r} lacks param {missing[0]!r}", lineno, path)
    for key in REQUIRED_CURVES:
        if key not in curves:
            raise TrajectoryParseError(f"trajectory {name!r} lacks curve {key!r}", lineno, path)
    try:
        return NominalTrajectory(
            name=name, incline_deg=p.pop("incline_deg"), nominal_speed=p.pop("nominal_speed"),
            T=p.pop("T"), mass=p.pop("mass"), curves=curves, params=p)
    except (ParameterError, GeometryError) as exc:
        raise TrajectoryParseError(str(exc), lineno, path) from None


def loads(text: str, path=None) -> TrajectoryLibrary:
    """Parse the line-oriented trajectory format."""
    trajs = []
    block = None
    seen_header = False
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tok = line.split()
        if not seen_header:
            if tok != [MAGIC, str(VERSION)]:
                raise TrajectoryParseError(f"expected header '{MAGIC} {VERSION}'", lineno, path)
            seen_header = True
            continue
        kind = tok[0]
        if kind == "trajectory":
            if len(tok) != 2:
                raise TrajectoryParseError("usage: trajectory <name>", lineno, path)
            if block is not None:
                trajs.append(_finish(block, path))
            block = (tok[1], {}, {}, lineno)
        elif kind in ("param", "curve"):
            if block is None:
                block = ("trajectory0", {}, {}, lineno)
            if kind == "param":
                if len(tok) != 3:
                    raise TrajectoryParseError("usage: param <name> <value>", lineno, path)
                if tok[1] in block[1]:
                    raise TrajectoryParseError(f"duplicate param {tok[1]!r}", lineno, path)
                block[1][tok[1]] = _number(tok[2], lineno, path)
            else:
                if len(tok) < 4:
                    raise TrajectoryParseError("usage: curve <name> <order> <coeff...>", lineno, path)
                try:
                    order = int(tok[2])
                except ValueError:
                    raise TrajectoryParseError(f"bad curve order {tok[2]!r}", lineno, path) from None
                coeffs = [_number(x, lineno, path) for x in tok[3:]]
                if order < 1 or len(coeffs) != order + 1:
                    raise TrajectoryParseError(
                        f"curve {tok[1]!r} of order {order} needs {order + 1} coefficients, "
                        f"got {len(coeffs)}", lineno, path)
                if tok[1] in block[2]:
                    raise TrajectoryParseError(f"duplicate curve {tok[1]!r}", lineno, path)
                block[2][tok[1]] = BezierCurve(tuple(coeffs))
        else:
            raise TrajectoryParseError(f"unknown directive {kind!r}", lineno, path)
    if not seen_header:
        raise TrajectoryParseError("empty trajectory file", 1, path)
    if block is not None:
        trajs.append(_finish(block, path))
    try:
        return TrajectoryLibrary(trajs)
    except ParameterError as exc:
        raise TrajectoryParseError(str(exc), None, path) from None


def load(path) -> TrajectoryLibrary:
    return loads(Path(path).read_text(), path=str(path))


# ---------------------------------------------------------------------------
# periodicity


@dataclass(frozen=True)
class PeriodicityReport:
    residual: float
    sagittal: float
    frontal: Optional[float]
    tol: float

    @property
    def passed(self) -> bool:
        return self.residual <= self.tol


def _step(x, profile, T, dt, P, params, mirror):
    _, states = integrate_phase(x, 0.0, T, dt, params, profile, T)
    return hybrid_impact(states[-1], profile, T, P, params, mirror=mirror)


def check_periodicity(traj: NominalTrajectory, params: RobotParams,
                      tol: Optional[float] = None) -> PeriodicityReport:
    """Sup-norm change of the start-of-step state over two torque-free steps.

    Both planes are checked when the trajectory carries frontal curves.
    """
    if tol is None:
        tol = traj.params.get("periodicity_tol", 1e-6)
    dt, T = traj.dt, traj.T
    x0 = traj.nominal_state(0.0)
    P = FootDisplacement(traj.step_length, traj.step_height)
    prof = traj.profile()
    x = x0
    for _ in range(2):
        x = _step(x, prof, T, dt, P, params, False)
    sag = max(abs(x.theta_c - x0.theta_c), abs(x.L - x0.L))
    front = None
    if traj.has_frontal:
        y0 = traj.frontal_state(0.0)
        Pf = FootDisplacement(traj.step_width, traj.step_height)
        fprof = traj.frontal_profile()
        y = y0
        for _ in range(2):
            y = _step(y, fprof, T, dt, Pf, params, True)
        front = max(abs(y.theta_c - y0.theta_c), abs(y.L - y0.L))
    res = sag if front is None else max(sag, front)
    return PeriodicityReport(res, sag, front, tol)


# ---------------------------------------------------------------------------
# synthesis


@dataclass(frozen=True)
class GaitDesign:
    """Pendulum length profiles and initial guesses for orbit shooting."""

    r_sagittal: BezierCurve
    r_frontal: BezierCurve
    step_length: float
    step_height: float
    step_width: float
    guess_sagittal: tuple
    guess_frontal: tuple


def design_gait(incline_deg: float, speed: float, T: float, params: RobotParams,
                height: float = 0.9, step_width: float = 0.25, order: int = 7,
                n_samples: int = 401) -> GaitDesign:
    """Length profiles from a constant-height LIP gait on the slope.

    The CoM rides the line ``z = height + x tan(incline)`` with the
    symmetric LIP solution in x and the mirrored LIP sway in y.  The
    sagittal and frontal lengths are fitted to ``hypot(x, z)`` and
    ``hypot(y, z)``.
    """
    k = math.tan(math.radians(incline_deg))
    w = math.sqrt(params.g / height)
    ell = speed * T
    t = np.linspace(0.0, T, n_samples)
    s = t / T
    s[-1] = 1.0
    x0 = -0.5 * ell
    v0 = -w * math.sinh(w * T) * x0 / (math.cosh(w * T) - 1.0) if ell > 0 else 0.0
    x = x0 * np.cosh(w * t) + v0 / w * np.sinh(w * t)
    xd = x0 * w * np.sinh(w * t) + v0 * np.cosh(w * t)
    z = height + k * x
    zd = k * xd
    c = math.cosh(w * T / 2)
    y = 0.5 * step_width * np.cosh(w * (t - T / 2)) / c
    yd = 0.5 * step_width * w * np.sinh(w * (t - T / 2)) / c
    r_s = fit_endpoint_constrained(s, np.hypot(x, z), order)
    r_f = fit_endpoint_constrained(s, np.hypot(y, z), order)
    m = params.m
    gs = (math.atan2(x[0], z[0]), m * (z[0] * xd[0] - x[0] * zd[0]))
    gf = (math.atan2(y[0], z[0]), m * (z[0] * yd[0] - y[0] * zd[0]))
    return GaitDesign(r_s, r_f, ell, ell * k, step_width, gs, gf)


def _step_map(x, rc, T, dt, Px, Pz, params, mirror, buf):
    th, L = kernels.integrate(x[0], x[1], 0.0, T, dt, T, params.m, params.g, rc, 0.0, buf)
    th, L, ok = kernels.impact(th, L, T, params.m, rc, Px, Pz, mirror)
    if not ok or not (math.isfinite(th) and math.isfinite(L)):
        raise GeometryError("step map left the feasible region", value=(th, L))
    return np.array([th, L])


def _shoot(guess, rc, T, dt, Px, Pz, params, mirror, max_iter=100, h=1e-6):
    """Newton on F(x) = step_map(x) - x with a central-difference Jacobian."""
    buf = np.empty(rc.shape[0])

    def F(x):
        return _step_map(x, rc, T, dt, Px, Pz, params, mirror, buf) - x

    x = np.array(guess, dtype=float)
    f = F(x)
    res = float(np.max(np.abs(f)))
    for _ in range(max_iter):
        if res <= 1e-12:
            break
        J = np.empty((2, 2))
        for j in range(2):
            e = np.zeros(2)
            e[j] = h * max(1.0, abs(x[j]))
            J[:, j] = (F(x + e) - F(x - e)) / (2 * e[j])
        try:
            dx = np.linalg.solve(J, -f)
        except np.linalg.LinAlgError:
            break
        lam = 1.0
        improved = False
        for _ in range(30):
            xn = x + lam * dx
            try:
                fn = F(xn)
            except GeometryError:
                lam *= 0.5
                continue
            rn = float(np.max(np.abs(fn)))
            if rn < res:
                improved = True
                break
            lam *= 0.5
        if not improved:
            break
        x, f, res = xn, fn, rn
    if not res <= 1e-9:
        raise NoOrbitError(f"shooting stalled with residual {res:.3e}", residual=res)
    return x, res


def _fit_phase(x0, rc, T, dt, params, order):
    """Euler samples of one step fitted with pinned endpoints."""
    prof = PendulumProfile(BezierCurve(tuple(rc)))
    times, states = integrate_phase(AlipState(*x0), 0.0, T, dt, params, prof, T)
    s = times / T
    s[-1] = 1.0
    th = np.array([st.theta_c for st in states])
    L = np.array([st.L for st in states])
    ct = fit_endpoint_constrained(s, th, order)
    cL = fit_endpoint_constrained(s, L, order)
    B = np.array([evaluate(ct, si) for si in s])
    err = max(float(np.max(np.abs(B - th))),
              float(np.max(np.abs(np.array([evaluate(cL, si) for si in s]) - L))))
    return ct, cL, err


def synthesize_nominal(incline_deg: float, speed: float, T: float, params: RobotParams,
                       r_c_profile: Optional[BezierCurve] = None, *,
                       height: float = 0.9, step_width: float = 0.25, dt: float = 1e-3,
                       order: int = 7, name: Optional[str] = None,
                       max_iter: int = 100) -> NominalTrajectory:
    """Torque-free period-one gait on an incline.

    The step displacement is ``speed*T`` along the slope direction and
    ``speed*T*tan(incline)`` up.  The sagittal and frontal start-of-step
    states are found by shooting, then the Euler solution over one step is
    fitted with order-`order` Bezier curves whose end points are the
    sampled start and pre-impact states.

    Raises
    ------
    NoOrbitError
        If shooting does not converge or a fit misses by more than 1e-4.
    """
    if not T > 0:
        raise ParameterError(f"step duration must be positive, got {T}")
    if not speed >= 0:
        raise ParameterError(f"speed must be non-negative, got {speed}")
    d = design_gait(incline_deg, speed, T, params, height=height, step_width=step_width,
                    order=order)
    r_s = r_c_profile if r_c_profile is not None else d.r_sagittal
    if min(r_s.coefficients) <= 0:
        raise GeometryError("r_c profile has non-positive control points")
    rs = r_s.as_array()
    rf = d.r_frontal.as_array()
    xs, _ = _shoot(d.guess_sagittal, rs, T, dt, d.step_length, d.step_height, params,
                   False, max_iter)
    xf, _ = _shoot(d.guess_frontal, rf, T, dt, d.step_width, d.step_height, params,
                   True, max_iter)
    th_s, L_s, e1 = _fit_phase(xs, rs, T, dt, params, order)
    th_f, L_f, e2 = _fit_phase(xf, rf, T, dt, params, order)
    err = max(e1, e2)
    if err > 1e-4:
        raise NoOrbitError(f"Bezier fit error {err:.2e} exceeds 1e-4", residual=err)
    if name is None:
        name = "marching" if speed == 0 else (
            "flat" if incline_deg == 0 else f"incline{incline_deg:g}")
    curves = {
        "theta_c_nom": th_s, "L_nom": L_s, "r_c": r_s,
        "theta_frontal_nom": th_f, "L_frontal_nom": L_f, "r_c_frontal": d.r_frontal,
    }
    extra = {
        "step_length": d.step_length, "step_height": d.step_height,
        "step_width": d.step_width, "height": height, "dt": dt,
        "periodic": 1.0, "periodicity_tol": 1e-6, "fit_error": err,
    }
    return NominalTrajectory(name=name, incline_deg=float(incline_deg),
                             nominal_speed=float(speed), T=float(T), curves=curves,
                             mass=params.m, params=extra)


def default_library(params: RobotParams = RobotParams(), speed: float = 0.5,
                    T: float = 0.4, inclines=(0.0, 8.0, 15.0)) -> TrajectoryLibrary:
    """Flat, 8 degree and 15 degree gaits at the nominal walking speed."""
    return TrajectoryLibrary([synthesize_nominal(i, speed, T, params) for i in inclines])


DATA_DIR = Path(__file__).resolve().parent / "data"
PACKAGED = {"default": "library.txt", "marching": "marching.txt"}


def resolve_library(name: str, base=None) -> TrajectoryLibrary:
    """A packaged library by name ("default", "marching") or a file path.

    Relative paths are taken from `base` when given (the directory of the
    file that referenced the library).
    """
    if name in PACKAGED:
        return load(DATA_DIR / PACKAGED[name])
    p = Path(name)
    if not p.is_absolute() and base is not None:
        p = Path(base) / p
    if not p.is_file():
        raise FileNotFoundError(f"{p}: no such trajectory library")
    return load(p)
