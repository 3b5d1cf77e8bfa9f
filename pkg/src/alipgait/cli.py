"""Command line entry point.

    alipgait trajgen --out lib.txt [--inclines 0,8,15] [--speed 0.5] [--period 0.4]
    alipgait lut build --traj lib.txt --name flat --out flat.lut
    alipgait run scenarios/incline_sweep.txt [--out-dir out] [--no-plot]
    alipgait serve --bind 127.0.0.1:0 [--traj lib.txt] [--config mpc.cfg]
    alipgait probe --target 127.0.0.1:9000 --rate 100 --duration 10 [--out report.txt]

Exit codes: 0 success, 1 the simulated robot fell, 2 usage or input error.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .alip import RobotParams
from .errors import AlipError
from .mpc import MpcConfig
from .textio import read_params

CONFIG_MAGIC = "ALIPCFG"


class UsageError(Exception):
    pass


def _parser():
    p = argparse.ArgumentParser(prog="alipgait", description=__doc__.split("\n")[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="cmd", required=True)

    g = sub.add_parser("trajgen", help="synthesize periodic gaits and save a library")
    g.add_argument("--out", required=True)
    g.add_argument("--inclines", default="0,8,15", help="comma separated degrees")
    g.add_argument("--speed", type=float, default=0.5)
    g.add_argument("--period", type=float, default=0.4, help="step duration T in s")
    g.add_argument("--marching", action="store_true", help="in-place gait only")

    lut = sub.add_parser("lut", help="placement lookup tables")
    lsub = lut.add_subparsers(dest="lut_cmd", required=True)
    b = lsub.add_parser("build")
    b.add_argument("--traj", default="default", help="library file or packaged name")
    b.add_argument("--name", required=True, help="trajectory name in the library")
    b.add_argument("--out", required=True)

    r = sub.add_parser("run", help="run a scenario file")
    r.add_argument("scenario")
    r.add_argument("--traj", help="library file, overrides the scenario's")
    r.add_argument("--config", help="MPC config file")
    r.add_argument("--server", help="use a UDP server at host:port")
    r.add_argument("--out-dir", default=".")
    r.add_argument("--no-plot", action="store_true")
    r.add_argument("--latency", action="store_true", help="add the latency column")

    s = sub.add_parser("serve", help="serve MPC torques over UDP")
    s.add_argument("--bind", default="127.0.0.1:9000")
    s.add_argument("--traj", default="default")
    s.add_argument("--config")
    s.add_argument("--port-file", help="write the bound host:port here")

    q = sub.add_parser("probe", help="measure round-trip latency of a server")
    q.add_argument("--target", required=True)
    q.add_argument("--rate", type=float, default=100.0)
    q.add_argument("--duration", type=float, default=10.0)
    q.add_argument("--out")
    return p


def load_config(path) -> MpcConfig:
    if path is None:
        return MpcConfig()
    if not Path(path).is_file():
        raise FileNotFoundError(f"{path}: no such config file")
    return MpcConfig.from_mapping(read_params(path, CONFIG_MAGIC))


def _library(name, base=None):
    from .trajectory import resolve_library
    return resolve_library(name, base)


def cmd_trajgen(a):
    from .trajectory import TrajectoryLibrary, default_library, save, synthesize_nominal
    params = RobotParams()
    if a.marching:
        lib = TrajectoryLibrary([synthesize_nominal(0.0, 0.0, a.period, params)])
    else:
        try:
            inclines = [float(x) for x in a.inclines.split(",") if x.strip()]
        except ValueError:
            raise UsageError(f"bad --inclines {a.inclines!r}") from None
        lib = default_library(params, a.speed, a.period, inclines)
    save(lib, a.out)
    for t in lib:
        print(f"{t.name}: incline {t.incline_deg:g} deg, step length {t.step_length:.4f} m")
    return 0


def cmd_lut(a):
    from .placement import build_lookup_table, save_lut
    lib = _library(a.traj)
    try:
        traj = lib[lib.index_of(a.name)]
    except (KeyError, ValueError):
        raise UsageError(f"no trajectory {a.name!r} in {a.traj}") from None
    lut = build_lookup_table(traj, RobotParams())
    save_lut(lut, a.out)
    print(f"{a.out}: {lut.values.size} nodes, {lut.n_fallback} filled, {lut.n_clamped} clamped")
    return 0


def cmd_run(a):
    from dataclasses import replace

    from .sim import emit_plot, export_csv, load_scenario, run_closed_loop
    path = Path(a.scenario)
    if not path.is_file():
        raise FileNotFoundError(f"{path}: no such scenario file")
    sc = load_scenario(path)
    if a.server:
        sc = replace(sc, control="udp", server=a.server)
    lib = _library(a.traj) if a.traj else _library(sc.library, path.parent)
    cfg = load_config(a.config)
    res = run_closed_loop(sc, lib, cfg)
    out = Path(a.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / f"{sc.name}.csv"
    export_csv(res.log, csv_path, include_latency=a.latency)
    if not a.no_plot:
        emit_plot(res.log, out / f"{sc.name}.svg", cfg.torque_limit)
    u = res.column("torque")
    print(f"{sc.name}: {res.steps} steps, {len(res.log)} ticks, max |u| {np.abs(u).max():.3f}")
    for t, old, new in res.switches:
        print(f"  switch at {t:.3f} s: {old} -> {new}")
    if res.fell:
        print(f"  FELL at {res.fall_time:.4f} s")
        return 1
    return 0


def cmd_serve(a):
    from .service import serve
    lib = _library(a.traj)
    cfg = load_config(a.config)

    def ready(addr):
        text = f"{addr[0]}:{addr[1]}"
        if a.port_file:
            Path(a.port_file).write_text(text + "\n")
        print(f"listening on {text}", flush=True)

    serve(a.bind, lib, cfg, RobotParams(), ready=ready)
    return 0


def cmd_probe(a):
    from .service import latency_probe
    if not (a.rate > 0 and a.duration > 0):
        raise UsageError("--rate and --duration must be positive")
    rep = latency_probe(a.target, a.rate, a.duration)
    text = rep.format()
    if a.out:
        Path(a.out).write_text(text)
    print(text, end="")
    return 0


COMMANDS = {"trajgen": cmd_trajgen, "lut": cmd_lut, "run": cmd_run,
            "serve": cmd_serve, "probe": cmd_probe}


def main(argv=None) -> int:
    parser = _parser()
    try:
        a = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if a.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[a.cmd](a)
    except (UsageError, OSError, ValueError, AlipError) as exc:
        print(f"alipgait {a.cmd}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
