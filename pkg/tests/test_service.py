import socket
import struct
import threading

import pytest
from hypothesis import given
from hypothesis import strategies as st

from alipgait.alip import AlipState
from alipgait.errors import WireFormatError
from alipgait.mpc import MpcSolver
from alipgait.service import (
    REQUEST_SIZE,
    RESPONSE_SIZE,
    TRAJ_BY_INCLINE,
    MpcClient,
    MpcRequest,
    MpcResponse,
    MpcServer,
    ServiceError,
    client_query,
    latency_probe,
    parse_address,
)

finite = st.floats(allow_nan=False, allow_infinity=False)


def test_sizes():
    assert REQUEST_SIZE == struct.calcsize("<4sBBIQH4d") == 52
    assert RESPONSE_SIZE == struct.calcsize("<4sBBIdIB") == 23


def test_request_layout():
    b = MpcRequest(7, 123, 2, 0.5, -1.0, 0.25, 8.0).encode()
    assert b[:4] == b"AMPC" and b[4] == 1 and b[5] == 0x01
    assert struct.unpack_from("<I", b, 6)[0] == 7
    assert struct.unpack_from("<Q", b, 10)[0] == 123
    assert struct.unpack_from("<H", b, 18)[0] == 2
    assert struct.unpack_from("<4d", b, 20) == (0.5, -1.0, 0.25, 8.0)


@given(st.integers(0, 2**32 - 1), st.integers(0, 2**64 - 1), st.integers(0, 0xFFFF),
       finite, finite, finite, finite)
def test_request_round_trip(seq, ts, tid, th, L, ph, inc):
    r = MpcRequest(seq, ts, tid, th, L, ph, inc)
    assert MpcRequest.decode(r.encode()) == r


@given(st.integers(0, 2**32 - 1), finite, st.integers(0, 2**32 - 1), st.booleans())
def test_response_round_trip(seq, tq, us, conv):
    r = MpcResponse(seq, tq, us, conv)
    b = r.encode()
    assert len(b) == RESPONSE_SIZE and MpcResponse.decode(b) == r


def test_codec_errors():
    good = MpcRequest(1, 2, 3, 0.0, 0.0, 0.0, 0.0).encode()
    with pytest.raises(WireFormatError):
        MpcRequest.decode(good[:-1])
    with pytest.raises(WireFormatError):
        MpcRequest.decode(b"XMPC" + good[4:])
    with pytest.raises(WireFormatError):
        MpcRequest(-1, 0, 0, 0.0, 0.0, 0.0, 0.0).encode()
    resp = MpcResponse(1, 0.0, 0, True).encode()
    with pytest.raises(WireFormatError):
        MpcResponse.decode(resp[:-1] + b"\x02")
    with pytest.raises(WireFormatError):
        MpcResponse.decode(good)


def test_parse_address():
    assert parse_address("127.0.0.1:9000") == ("127.0.0.1", 9000)
    with pytest.raises(ValueError):
        parse_address("9000")


@pytest.fixture(scope="module")
def server(lib):
    srv = MpcServer(("127.0.0.1", 0), lib)
    srv.start_thread()
    yield srv
    srv.close()


def test_handle_nominal_and_drops(server, flat):
    x = flat.nominal_state(0.1)
    out = server.handle(MpcRequest(5, 0, 0, x.theta_c, x.L, 0.1, 0.0).encode())
    r = MpcResponse.decode(out)
    assert r.seq == 5 and abs(r.torque) <= 1e-9 and r.converged
    before = server.dropped
    assert server.handle(b"garbage") is None
    assert server.handle(MpcRequest(5, 0, 99, 0.0, 0.0, 0.1, 0.0).encode()) is None
    assert server.handle(MpcRequest(5, 0, 0, 0.0, 0.0, 5.0, 0.0).encode()) is None
    assert server.dropped == before + 3


def test_wrong_magic_over_the_wire(server):
    before = server.dropped
    with socket.socket(socket.AF_INET, socket.SOCK_DGRAM) as s:
        s.settimeout(0.2)
        bad = b"XXXX" + MpcRequest(1, 0, 0, 0.0, 0.0, 0.1, 0.0).encode()[4:]
        s.sendto(bad, server.address)
        with pytest.raises(socket.timeout):
            s.recv(64)
    assert server.dropped == before + 1


def test_client_matches_in_process(server, lib):
    traj = lib[1]
    ref = MpcSolver(traj)
    n = traj.nominal_state(0.2)
    x = AlipState(n.theta_c + 0.03, n.L - 2.0)
    with MpcClient(server.address, timeout_us=1_000_000) as c:
        u = c.query(x, 0.2, 1)
        assert c.status == "ok" and c.last_converged
        assert u == ref.torque(x, 0.2)[0]
        # selection by incline: 10 degrees uses the 8 degree trajectory
        assert c.query(x, 0.2, TRAJ_BY_INCLINE, 10.0) == u
    assert client_query(server.address, x, 0.2, 1, timeout_us=1_000_000) == u


def test_hold_then_zero_when_server_down(lib, flat):
    srv = MpcServer(("127.0.0.1", 0), lib)
    srv.start_thread()
    n = flat.nominal_state(0.1)
    x = AlipState(n.theta_c + 0.05, n.L)
    c = MpcClient(srv.address, timeout_us=200_000, hold_limit=2)
    u = c.query(x, 0.1, 0)
    assert u != 0.0
    srv.close()
    c.timeout_us = 20_000
    assert c.query(x, 0.1, 0) == u and c.status == "hold"
    assert c.query(x, 0.1, 0) == u and c.status == "hold"
    assert c.query(x, 0.1, 0) == 0.0 and c.status == "zero"
    c.close()


def test_stale_reply_discarded():
    fake = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
    fake.bind(("127.0.0.1", 0))
    fake.settimeout(2.0)

    def respond():
        data, addr = fake.recvfrom(128)
        req = MpcRequest.decode(data)
        fake.sendto(MpcResponse(req.seq - 1, 99.0, 1, True).encode(), addr)
        fake.sendto(MpcResponse(req.seq, 1.5, 1, True).encode(), addr)

    th = threading.Thread(target=respond)
    th.start()
    with MpcClient(fake.getsockname(), timeout_us=1_000_000) as c:
        c.seq = 41
        assert c.query(AlipState(0.0, 0.0), 0.1, 0) == 1.5
        assert c.stale == 1
    th.join()
    fake.close()


def test_bind_failure(lib):
    with pytest.raises(ServiceError):
        MpcServer(("256.0.0.1", 0), lib)


def test_probe_short(server):
    rep = latency_probe(server.address, rate=50, duration=0.4)
    assert rep.requests == 20
    lines = rep.format().splitlines()
    assert [ln.split()[0] for ln in lines] == [
        "requests", "responses", "loss_pct", "rtt_p50_us", "rtt_p99_us", "rtt_max_us",
        "compute_p50_us", "compute_p99_us"]
    assert rep.responses >= 18
