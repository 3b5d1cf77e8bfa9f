"""Closed-loop hybrid simulation of walking scenarios.

The plant is the same reduced-order model used for planning: a sagittal
ALIP driven by the ankle MPC and a frontal ALIP steered only by where the
swing foot lands.  Both pendulums are stepped with explicit Euler at the
control tick and swap feet through the hybrid impact every T seconds.
"""
from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import NamedTuple, Optional, Sequence

import numpy as np

from . import kernels
from .alip import AlipState, RobotParams
from .errors import ParameterError, TrajectoryParseError
from .mpc import MpcConfig, MpcSolver
from .placement import LookupTable, PlacementConfig, build_lookup_table, placement_slope
from .textio import directives, number
from .trajectory import NominalTrajectory, TrajectoryLibrary

log = logging.getLogger(__name__)

__all__ = [
    "Profile",
    "Disturbance",
    "Scenario",
    "StepLog",
    "ImpactRecord",
    "SimResult",
    "CSV_COLUMNS",
    "load_scenario",
    "loads_scenario",
    "run_closed_loop",
    "lookup_tables",
    "export_csv",
    "read_csv",
    "emit_plot",
]

FALL_ANGLE = math.pi / 3
SCENARIO_MAGIC = "ALIPSCEN"


@dataclass(frozen=True)
class Profile:
    """Piecewise-linear function of time, held constant past the last knot."""

    knots: tuple = ((0.0, 0.0),)

    def __post_init__(self):
        k = tuple((float(t), float(v)) for t, v in self.knots)
        if not k:
            raise ParameterError("a profile needs at least one knot")
        if k[0][0] != 0.0:
            raise ParameterError("profiles must start at t = 0")
        for (t0, _), (t1, _) in zip(k, k[1:]):
            if not t1 > t0:
                raise ParameterError("profile times must increase")
        object.__setattr__(self, "knots", k)

    @classmethod
    def constant(cls, v):
        return cls(((0.0, v),))

    def __call__(self, t: float) -> float:
        k = self.knots
        if t <= k[0][0]:
            return k[0][1]
        for (t0, v0), (t1, v1) in zip(k, k[1:]):
            if t <= t1:
                return v0 + (v1 - v0) * (t - t0) / (t1 - t0)
        return k[-1][1]

    def minimum(self) -> float:
        return min(v for _, v in self.knots)


@dataclass(frozen=True)
class Disturbance:
    """Instantaneous change of angular momentum (kg m^2/s)."""

    time: float
    plane: str
    dL: float

    def __post_init__(self):
        if self.plane not in ("sagittal", "frontal"):
            raise ParameterError(f"plane must be sagittal or frontal, got {self.plane!r}")


@dataclass(frozen=True)
class Scenario:
    name: str = "scenario"
    duration: float = 10.0
    steps: Optional[int] = None
    incline: Profile = Profile()
    belt: Profile = Profile()
    command: Profile = Profile()
    disturbances: tuple = ()
    control: str = "inprocess"
    server: Optional[str] = None
    seed: int = 0
    random_impulses: int = 0
    random_impulse_size: float = 0.0
    frontal_L_offset: float = 0.0
    sagittal_L_offset: float = 0.0
    library: str = "default"
    speed_gain: float = 0.05
    y_min: float = 0.0
    y_max: float = 0.6

    def __post_init__(self):
        if self.steps is None and not self.duration > 0:
            raise ParameterError("duration must be positive")
        if self.steps is not None and self.steps < 1:
            raise ParameterError("steps must be at least 1")
        if self.belt.minimum() < 0 or self.command.minimum() < 0:
            raise ParameterError("speeds must be non-negative")
        if self.control not in ("inprocess", "udp"):
            raise ParameterError(f"control must be inprocess or udp, got {self.control!r}")
        if self.control == "udp" and not self.server:
            raise ParameterError("udp control needs a server address")
        if not self.y_min < self.y_max:
            raise ParameterError("y_min must be below y_max")
        object.__setattr__(self, "disturbances",
                           tuple(sorted(self.disturbances, key=lambda d: d.time)))

    def all_disturbances(self):
        """Scheduled disturbances plus the seeded random sagittal impulses."""
        out = list(self.disturbances)
        if self.random_impulses:
            rng = np.random.default_rng(self.seed)
            span = self.duration
            times = np.sort(rng.uniform(0.1 * span, 0.9 * span, self.random_impulses))
            sizes = rng.uniform(-1.0, 1.0, self.random_impulses) * self.random_impulse_size
            out += [Disturbance(float(t), "sagittal", float(s)) for t, s in zip(times, sizes)]
        return sorted(out, key=lambda d: d.time)


_STRING_KEYS = {"name", "control", "server", "library"}
_INT_KEYS = {"steps", "seed", "random_impulses"}


def loads_scenario(text: str, path=None) -> Scenario:
    """Parse a scenario file.

    Grammar (after the ``ALIPSCEN 1`` header)::

        name <word>            control inprocess|udp     server <host:port>
        library <name|path>    param <key> <number>
        profile incline|belt|command <t0> <v0> [<t1> <v1> ...]
        disturbance <time> sagittal|frontal <dL>
    """
    kw = {}
    dist = []
    for lineno, tok in directives(text, SCENARIO_MAGIC, path):
        d = tok[0]
        try:
            if d in _STRING_KEYS:
                if len(tok) != 2:
                    raise TrajectoryParseError(f"usage: {d} <value>", lineno, path)
                kw[d] = tok[1]
            elif d == "param":
                if len(tok) != 3:
                    raise TrajectoryParseError("usage: param <name> <value>", lineno, path)
                key = tok[1]
                if key not in Scenario.__dataclass_fields__ or key in _STRING_KEYS \
                        or key in ("incline", "belt", "command", "disturbances"):
                    raise TrajectoryParseError(f"unknown scenario param {key!r}", lineno, path)
                v = number(tok[2], lineno, path)
                kw[key] = int(v) if key in _INT_KEYS else v
            elif d == "profile":
                if len(tok) < 4 or len(tok) % 2:
                    raise TrajectoryParseError("usage: profile <name> <t> <v> ...", lineno, path)
                if tok[1] not in ("incline", "belt", "command"):
                    raise TrajectoryParseError(f"unknown profile {tok[1]!r}", lineno, path)
                vals = [number(x, lineno, path) for x in tok[2:]]
                kw[tok[1]] = Profile(tuple(zip(vals[0::2], vals[1::2])))
            elif d == "disturbance":
                if len(tok) != 4:
                    raise TrajectoryParseError("usage: disturbance <t> <plane> <dL>", lineno, path)
                dist.append(Disturbance(number(tok[1], lineno, path), tok[2],
                                        number(tok[3], lineno, path)))
            else:
                raise TrajectoryParseError(f"unknown directive {d!r}", lineno, path)
        except ParameterError as exc:
            raise TrajectoryParseError(str(exc), lineno, path) from None
    try:
        return Scenario(disturbances=tuple(dist), **kw)
    except ParameterError as exc:
        raise TrajectoryParseError(str(exc), None, path) from None


def load_scenario(path) -> Scenario:
    return loads_scenario(Path(path).read_text(), path=str(path))


class StepLog(NamedTuple):
    """State and commands at the start of one control tick."""

    time: float
    step: int
    stance: str
    trajectory: str
    theta_sag: float
    L_sag: float
    theta_front: float
    L_front: float
    torque: float
    y_des: float
    mpc_latency_us: float
    events: tuple


class ImpactRecord(NamedTuple):
    time: float
    step: int
    trajectory: str
    incline_deg: float
    theta_sag: float
    L_sag: float
    theta_front: float
    L_front: float
    L_des: float
    y_des: float


@dataclass
class SimResult:
    scenario: Scenario
    log: list
    impacts: list
    fell: bool = False
    fall_time: Optional[float] = None
    switches: list = field(default_factory=list)

    @property
    def steps(self) -> int:
        return len(self.impacts)

    def column(self, name) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.log])


_LUT_CACHE = {}


def lookup_tables(lib: TrajectoryLibrary, params: RobotParams,
                  config: PlacementConfig = PlacementConfig()):
    """Placement tables and inverse slopes per trajectory, cached per process."""
    out = []
    for traj in lib:
        key = (traj.name, traj.curves["L_frontal_nom"].coefficients,
               traj.curves["r_c_frontal"].coefficients, traj.step_width, traj.step_height,
               traj.T, traj.dt, params, config)
        if key not in _LUT_CACHE:
            lut = build_lookup_table(traj, params, config=config)
            _LUT_CACHE[key] = (lut, 1.0 / placement_slope(traj, params, config))
        out.append(_LUT_CACHE[key])
    return out


def _ticks(T, tick):
    n = int(round(T / tick))
    if n < 1 or abs(n * tick - T) > 1e-9 * T:
        raise ParameterError(f"step duration {T} is not a whole number of ticks {tick}")
    return n


def run_closed_loop(scenario: Scenario, lib: TrajectoryLibrary,
                    cfg: MpcConfig = MpcConfig(), params: RobotParams = RobotParams(), *,
                    tick: float = 5e-4, tables=None, client=None,
                    placement: PlacementConfig = PlacementConfig()) -> SimResult:
    """Simulate `scenario` at a fixed control tick (2 kHz by default).

    Each step starts by selecting the trajectory for the current incline.
    The ankle torque comes from the MPC every ``cfg.dt_mpc`` and is held in
    between.  The lateral foot target comes from the placement table every
    tick, shifted for the commanded speed, and is used at touchdown.  The
    run stops early if either pendulum leans past 60 degrees.
    """
    if tables is None:
        tables = lookup_tables(lib, params, placement)
    own_client = None
    if scenario.control == "udp" and client is None:
        from .service import MpcClient
        client = own_client = MpcClient(scenario.server)
    try:
        return _run(scenario, lib, cfg, params, tick, tables, client)
    finally:
        if own_client is not None:
            own_client.close()


def _run(sc, lib, cfg, params, tick, tables, client):
    m, g = params.m, params.g
    mpc_every = max(1, int(round(cfg.dt_mpc / tick)))
    solvers = {}
    disturbances = sc.all_disturbances()
    dpos = 0
    buf = np.empty(64)

    idx = lib.index_for_incline(sc.incline(0.0))
    traj = lib[idx]
    duration = sc.duration if sc.steps is None else sc.steps * traj.T
    n_ticks = int(round(duration / tick))

    x0 = traj.nominal_state(0.0)
    f0 = traj.frontal_state(0.0)
    th_s, L_s = x0.theta_c, x0.L + sc.sagittal_L_offset
    th_f = f0.theta_c
    L_f = f0.L + sc.frontal_L_offset * abs(f0.L)

    res = SimResult(sc, [], [])
    k = 0
    step = 0
    u = 0.0
    y = traj.step_width
    switch_name = None
    for n in range(n_ticks):
        t = n * tick
        ev = []
        if k == 0:
            new = lib.index_for_incline(sc.incline(t))
            if new != idx or n == 0:
                if new != idx:
                    res.switches.append((t, lib[idx].name, lib[new].name))
                    switch_name = lib[new].name
                idx = new
                traj = lib[idx]
                T = traj.T
                per_step = _ticks(T, tick)
                rc_s = traj.coefficients("r_c")
                rc_f = traj.coefficients("r_c_frontal")
                lut, inv_slope = tables[idx]
                L_des_nom = traj.curves["L_frontal_nom"].coefficients[-1]
                if idx not in solvers and client is None:
                    solvers[idx] = MpcSolver(traj, cfg, params)
            if switch_name is not None:
                ev.append("switch:" + switch_name)
                switch_name = None
        while dpos < len(disturbances) and disturbances[dpos].time < t + 0.5 * tick:
            d = disturbances[dpos]
            if d.plane == "sagittal":
                L_s += d.dL
            else:
                L_f += d.dL
            ev.append("disturbance")
            dpos += 1

        phase = k * tick
        latency = math.nan
        if k % mpc_every == 0:
            if client is None:
                solver = solvers[idx]
                t0 = time.perf_counter()
                u, conv = solver.torque(AlipState(th_s, L_s), phase)
                latency = (time.perf_counter() - t0) * 1e6
                if not conv:
                    ev.append("fallback:mpc")
            else:
                u = client.query(AlipState(th_s, L_s), phase, idx, sc.incline(t))
                if client.status == "ok":
                    latency = float(client.last_rtt_us)
                    if not client.last_converged:
                        ev.append("fallback:mpc")
                else:
                    ev.append("fallback:" + client.status)

        v_cmd = sc.belt(t) + sc.command(t)
        L_des = L_des_nom + sc.speed_gain * m * traj.height * (v_cmd - traj.nominal_speed)
        y = kernels.lut_interp(lut.values, lut._ax, lut.ref_theta, lut.ref_L, th_f, L_f, phase)
        y += (L_des - L_des_nom) * inv_slope
        if not lut.contains(th_f, L_f, phase):
            ev.append("lut_clamp")
        if y < sc.y_min:
            y = sc.y_min
            ev.append("y_clamp")
        elif y > sc.y_max:
            y = sc.y_max
            ev.append("y_clamp")

        row = [t, step, "left" if step % 2 == 0 else "right", traj.name,
               th_s, L_s, th_f, L_f, u, y, latency]

        th_s, L_s = kernels.integrate(th_s, L_s, phase, phase + tick, tick, T, m, g, rc_s, u, buf)
        th_f, L_f = kernels.integrate(th_f, L_f, phase, phase + tick, tick, T, m, g, rc_f, 0.0, buf)
        k += 1
        if k == per_step:
            inc = sc.incline(t + tick)
            Pz = traj.step_length * math.tan(math.radians(inc))
            res.impacts.append(ImpactRecord(t + tick, step, traj.name, inc, th_s, L_s,
                                            th_f, L_f, L_des, y))
            th_s, L_s, ok_s = kernels.impact(th_s, L_s, T, m, rc_s, traj.step_length, Pz, False)
            th_f, L_f, ok_f = kernels.impact(th_f, L_f, T, m, rc_f, y, Pz, True)
            k = 0
            step += 1
            ev.append("impact")
        fell = not (abs(th_s) < FALL_ANGLE and abs(th_f) < FALL_ANGLE)
        if fell:
            ev.append("fall")
        res.log.append(StepLog(*row, tuple(ev)))
        if fell:
            res.fell = True
            res.fall_time = t + tick
            log.warning("fall at t=%.4f s (step %d)", t + tick, step)
            break
    return res


CSV_COLUMNS = ("time", "step", "stance", "trajectory", "theta_sag", "L_sag",
               "theta_front", "L_front", "torque", "y_des", "events")
_FLOAT_COLS = ("time", "theta_sag", "L_sag", "theta_front", "L_front", "torque", "y_des")


def _f(x):
    return "%.17g" % x


def export_csv(log: Sequence[StepLog], path, include_latency: bool = False) -> None:
    """Write the log with a fixed header.

    Wall-clock solve latency is excluded unless `include_latency` is set,
    so repeated runs produce identical files.  Events are joined with ';'.
    """
    if not log:
        raise ValueError("cannot export an empty log")
    cols = CSV_COLUMNS[:-1] + (("mpc_latency_us",) if include_latency else ()) + ("events",)
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(cols)
            for r in log:
                row = [_f(r.time), str(r.step), r.stance, r.trajectory, _f(r.theta_sag),
                       _f(r.L_sag), _f(r.theta_front), _f(r.L_front), _f(r.torque),
                       _f(r.y_des)]
                if include_latency:
                    row.append(_f(r.mpc_latency_us))
                row.append(";".join(r.events))
                w.writerow(row)
    except OSError as exc:
        raise OSError(f"cannot write CSV {path}: {exc}") from exc


def read_csv(path):
    """Rows of an exported CSV as dicts with floats parsed."""
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            for k in _FLOAT_COLS + ("mpc_latency_us",):
                if k in row:
                    row[k] = float(row[k])
            row["step"] = int(row["step"])
            out.append(row)
    return out


def emit_plot(log: Sequence[StepLog], path, torque_limit: float = 23.0) -> None:
    """SVG of ankle torque (with the +-limit band) and momenta against time."""
    if not log:
        raise ValueError("cannot plot an empty log")
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    t = np.array([r.time for r in log])
    u = np.array([r.torque for r in log])
    Ls = np.array([r.L_sag for r in log])
    Lf = np.array([r.L_front for r in log])
    left = np.array([r.stance == "left" for r in log])
    with matplotlib.rc_context({"svg.hashsalt": "alipgait", "svg.fonttype": "none"}):
        fig, (a1, a2) = plt.subplots(2, 1, sharex=True, figsize=(10, 6))
        a1.axhspan(-torque_limit, torque_limit, color="0.92", zorder=0)
        a1.axhline(torque_limit, color="r", lw=0.8, ls="--")
        a1.axhline(-torque_limit, color="r", lw=0.8, ls="--")
        a1.plot(t, np.where(left, u, np.nan), lw=0.8, label="left stance")
        a1.plot(t, np.where(~left, u, np.nan), lw=0.8, label="right stance")
        a1.set_ylabel("ankle torque (N m)")
        a1.legend(loc="upper right", fontsize=8)
        a2.plot(t, Ls, lw=0.8, label="sagittal L")
        a2.plot(t, Lf, lw=0.8, label="frontal L")
        a2.set_ylabel("L (kg m$^2$/s)")
        a2.set_xlabel("time (s)")
        a2.legend(loc="upper right", fontsize=8)
        fig.tight_layout()
        try:
            fig.savefig(path, format="svg", metadata={"Date": None})
        except OSError as exc:
            raise OSError(f"cannot write plot {path}: {exc}") from exc
        finally:
            plt.close(fig)
