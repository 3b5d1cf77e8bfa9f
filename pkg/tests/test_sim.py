import math
import os

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from alipgait.errors import ParameterError, TrajectoryParseError
from alipgait.sim import (
    CSV_COLUMNS,
    Disturbance,
    Profile,
    Scenario,
    emit_plot,
    export_csv,
    load_scenario,
    loads_scenario,
    read_csv,
    run_closed_loop,
)
from alipgait.trajectory import resolve_library


def test_profile_interpolates_and_holds():
    p = Profile(((0, 0), (10, 20), (20, 20), (30, 0)))
    assert p(0) == 0 and p(5) == 10 and p(15) == 20 and p(25) == 10 and p(100) == 0
    assert Profile.constant(0.9)(42.0) == 0.9
    with pytest.raises(ParameterError):
        Profile(((1, 0),))
    with pytest.raises(ParameterError):
        Profile(((0, 0), (0, 1)))


@given(st.lists(st.tuples(st.floats(0.01, 10), st.floats(-5, 5)), min_size=1, max_size=6),
       st.floats(0, 70))
def test_profile_stays_within_knot_values(steps, t):
    knots, acc = [(0.0, 1.0)], 0.0
    for dt, v in steps:
        acc += dt
        knots.append((acc, v))
    p = Profile(tuple(knots))
    vals = [v for _, v in knots]
    assert min(vals) - 1e-12 <= p(t) <= max(vals) + 1e-12


def test_scenario_validation():
    with pytest.raises(ParameterError):
        Scenario(belt=Profile.constant(-0.1))
    with pytest.raises(ParameterError):
        Scenario(control="udp")
    with pytest.raises(ParameterError):
        Scenario(control="carrier-pigeon")
    with pytest.raises(ParameterError):
        Disturbance(1.0, "vertical", 1.0)


def test_shipped_scenarios_parse(scenario_dir):
    names = sorted(f for f in os.listdir(scenario_dir) if f.endswith(".txt"))
    assert {"incline_sweep.txt", "flat_to_incline_4.txt", "flat_to_incline_8.txt",
            "flat_to_incline_15.txt", "flat_to_incline_20.txt", "walkway_0p5.txt",
            "walkway_0p8.txt", "walkway_1p2.txt", "marching.txt"} <= set(names)
    for f in names:
        sc = load_scenario(os.path.join(scenario_dir, f))
        assert sc.name == f[:-4]
    sweep = load_scenario(os.path.join(scenario_dir, "incline_sweep.txt"))
    assert sweep.duration == 60 and sweep.incline(20) == 20 and sweep.belt(3) == 0.9


def test_scenario_parse_errors():
    with pytest.raises(TrajectoryParseError, match="s.txt:2: unknown directive"):
        loads_scenario("ALIPSCEN 1\nbogus 1\n", path="s.txt")
    with pytest.raises(TrajectoryParseError, match="unknown scenario param"):
        loads_scenario("ALIPSCEN 1\nparam nonsense 1\n")
    with pytest.raises(TrajectoryParseError, match="usage: profile"):
        loads_scenario("ALIPSCEN 1\nprofile belt 0\n")
    with pytest.raises(TrajectoryParseError, match="^3: profiles must start"):
        loads_scenario("ALIPSCEN 1\nname x\nprofile belt 1 0\n")
    with pytest.raises(TrajectoryParseError, match="speeds must be non-negative"):
        loads_scenario("ALIPSCEN 1\nprofile belt 0 -1\n")


def test_random_impulses_are_seeded():
    a = Scenario(seed=4, random_impulses=3, random_impulse_size=1.0).all_disturbances()
    b = Scenario(seed=4, random_impulses=3, random_impulse_size=1.0).all_disturbances()
    c = Scenario(seed=5, random_impulses=3, random_impulse_size=1.0).all_disturbances()
    assert a == b and a != c and len(a) == 3


@pytest.fixture(scope="module")
def marching_run(params):
    lib = resolve_library("marching")
    return run_closed_loop(Scenario(name="m", steps=50), lib, params=params)


def test_marching_in_place(marching_run):
    r = marching_run
    assert not r.fell and r.steps == 50
    assert np.mean(np.abs(r.column("torque"))) < 0.5


@pytest.fixture(scope="module")
def short_run(lib, tables):
    sc = Scenario(name="short", duration=4.0, belt=Profile.constant(0.7),
                  incline=Profile(((0, 0), (2, 12))),
                  disturbances=(Disturbance(1.0, "sagittal", 1.0), Disturbance(1.5, "frontal", 1.0)))
    return run_closed_loop(sc, lib, tables=tables)


def test_log_invariants(short_run):
    t = short_run.column("time")
    assert np.all(np.diff(t) > 0)
    assert np.all(np.abs(short_run.column("torque")) <= 23.0)
    assert not short_run.fell
    stance = short_run.column("stance")
    steps = short_run.column("step")
    assert np.all((stance == "left") == (steps % 2 == 0))
    ev = [e for r in short_run.log for e in r.events]
    assert ev.count("disturbance") == 2
    assert ev.count("impact") == short_run.steps == 10


def test_switch_happens_at_first_step_start_past_threshold(short_run):
    (t_sw, old, new), = short_run.switches
    assert (old, new) == ("flat", "incline8")
    # incline reaches 8 degrees at 4/3 s; the next step boundary is 1.6 s
    assert t_sw == pytest.approx(1.6, abs=1e-9)
    row = next(r for r in short_run.log if r.time == t_sw)
    assert "switch:incline8" in row.events and row.trajectory == "incline8"


def test_deterministic(lib, tables, short_run):
    again = run_closed_loop(short_run.scenario, lib, tables=tables)
    strip = [r[:10] + r[11:] for r in short_run.log]
    assert strip == [r[:10] + r[11:] for r in again.log]


def test_fall_is_detected(lib, tables):
    sc = Scenario(name="push", duration=3.0, disturbances=(Disturbance(0.5, "sagittal", 60.0),))
    r = run_closed_loop(sc, lib, tables=tables)
    assert r.fell and r.fall_time is not None and r.fall_time < 3.0
    assert "fall" in r.log[-1].events
    last = r.log[-1]
    assert r.fall_time == pytest.approx(last.time + 5e-4)


def test_csv_round_trip(tmp_path, short_run):
    path = tmp_path / "log.csv"
    export_csv(short_run.log, path)
    lines = path.read_text().splitlines()
    assert lines[0].split(",") == list(CSV_COLUMNS)
    assert all(len(ln.split(",")) == len(CSV_COLUMNS) for ln in lines)
    rows = read_csv(path)
    for a, b in zip(short_run.log, rows):
        assert (a.time, a.torque, a.L_sag, a.y_des) == (b["time"], b["torque"], b["L_sag"], b["y_des"])
        assert ";".join(a.events) == b["events"]


def test_csv_with_latency(tmp_path, short_run):
    path = tmp_path / "lat.csv"
    export_csv(short_run.log, path, include_latency=True)
    rows = read_csv(path)
    assert "mpc_latency_us" in rows[0]
    assert not math.isnan(rows[0]["mpc_latency_us"])


def test_empty_log_guards(tmp_path):
    with pytest.raises(ValueError):
        export_csv([], tmp_path / "x.csv")
    with pytest.raises(ValueError):
        emit_plot([], tmp_path / "x.svg")


def test_io_error_names_path(tmp_path, short_run):
    bad = tmp_path / "missing_dir" / "x.csv"
    with pytest.raises(OSError, match="missing_dir"):
        export_csv(short_run.log, bad)


def test_plot(tmp_path, short_run):
    p = tmp_path / "p.svg"
    emit_plot(short_run.log[:400], p)
    text = p.read_text()
    assert text.startswith("<?xml") and "ankle torque" in text
    p2 = tmp_path / "q.svg"
    emit_plot(short_run.log[:400], p2)
    assert p2.read_bytes() == p.read_bytes()
