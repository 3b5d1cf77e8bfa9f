"""UDP offload of the ankle MPC: wire format, server, client and probe.

Request datagram (little-endian, 52 bytes)::

    magic "AMPC" | version u8 = 1 | type u8 = 0x01 | seq u32 |
    timestamp_us u64 | traj_id u16 | theta f64 | L f64 | phase f64 | incline f64

Response datagram (little-endian, 23 bytes)::

    magic "AMPC" | version u8 = 1 | type u8 = 0x02 | seq u32 |
    torque f64 | compute_time_us u32 | converged u8

``traj_id`` indexes the server's trajectory library; the value 0xFFFF asks
the server to pick by ``incline`` instead.
"""
from __future__ import annotations

import logging
import math
import socket
import struct
import threading
import time
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .alip import AlipState, RobotParams
from .errors import AlipError, WireFormatError
from .mpc import MpcConfig, MpcSolver
from .trajectory import TrajectoryLibrary

log = logging.getLogger(__name__)

__all__ = [
    "MAGIC",
    "REQUEST_SIZE",
    "RESPONSE_SIZE",
    "TRAJ_BY_INCLINE",
    "MpcRequest",
    "MpcResponse",
    "MpcServer",
    "MpcClient",
    "ServiceError",
    "ProbeReport",
    "serve",
    "client_query",
    "latency_probe",
    "parse_address",
]

MAGIC = b"AMPC"
VERSION = 1
TYPE_REQUEST = 0x01
TYPE_RESPONSE = 0x02
TRAJ_BY_INCLINE = 0xFFFF

_REQ = struct.Struct("<4sBBIQH4d")
_RESP = struct.Struct("<4sBBIdIB")
REQUEST_SIZE = _REQ.size
RESPONSE_SIZE = _RESP.size


class ServiceError(AlipError, OSError):
    """Socket setup failed."""


def parse_address(text: str):
    """'host:port' to a (host, port) tuple."""
    host, sep, port = text.rpartition(":")
    if not sep or not host:
        raise ValueError(f"expected host:port, got {text!r}")
    return host, int(port)


@dataclass(frozen=True)
class MpcRequest:
    seq: int
    timestamp_us: int
    traj_id: int
    theta_c: float
    L: float
    phase_time: float
    incline_deg: float

    def encode(self) -> bytes:
        try:
            return _REQ.pack(MAGIC, VERSION, TYPE_REQUEST, self.seq, self.timestamp_us,
                             self.traj_id, self.theta_c, self.L, self.phase_time,
                             self.incline_deg)
        except struct.error as exc:
            raise WireFormatError(str(exc)) from None

    @classmethod
    def decode(cls, data: bytes) -> "MpcRequest":
        if len(data) != REQUEST_SIZE:
            raise WireFormatError(f"request must be {REQUEST_SIZE} bytes, got {len(data)}")
        magic, ver, typ, seq, ts, tid, th, L, ph, inc = _REQ.unpack(data)
        if magic != MAGIC or ver != VERSION or typ != TYPE_REQUEST:
            raise WireFormatError("bad request header")
        return cls(seq, ts, tid, th, L, ph, inc)


@dataclass(frozen=True)
class MpcResponse:
    seq: int
    torque: float
    compute_time_us: int
    converged: bool

    def encode(self) -> bytes:
        try:
            return _RESP.pack(MAGIC, VERSION, TYPE_RESPONSE, self.seq, self.torque,
                              self.compute_time_us, 1 if self.converged else 0)
        except struct.error as exc:
            raise WireFormatError(str(exc)) from None

    @classmethod
    def decode(cls, data: bytes) -> "MpcResponse":
        if len(data) != RESPONSE_SIZE:
            raise WireFormatError(f"response must be {RESPONSE_SIZE} bytes, got {len(data)}")
        magic, ver, typ, seq, tq, cus, conv = _RESP.unpack(data)
        if magic != MAGIC or ver != VERSION or typ != TYPE_RESPONSE or conv > 1:
            raise WireFormatError("bad response header")
        return cls(seq, tq, cus, bool(conv))


class MpcServer:
    """Sequential request/response loop around one MpcSolver per trajectory."""

    def __init__(self, bind, library: TrajectoryLibrary, cfg: MpcConfig = MpcConfig(),
                 params: RobotParams = RobotParams()):
        if isinstance(bind, str):
            bind = parse_address(bind)
        self.library = library
        self.cfg = cfg
        self.solvers = [MpcSolver(t, cfg, params) for t in library]
        self.handled = 0
        self.dropped = 0
        self._stop = threading.Event()
        try:
            self.sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
            self.sock.bind(bind)
        except OSError as exc:
            raise ServiceError(f"cannot bind {bind}: {exc}") from exc
        # warm the compiled solver so the first real request is not slow
        t0 = library[0]
        self.solvers[0].torque(t0.nominal_state(0.0), 0.0)

    @property
    def address(self):
        return self.sock.getsockname()

    def handle(self, data: bytes) -> Optional[bytes]:
        """Response bytes for one datagram, or None when it is dropped."""
        try:
            req = MpcRequest.decode(data)
        except WireFormatError:
            self.dropped += 1
            return None
        tid = req.traj_id
        if tid == TRAJ_BY_INCLINE:
            tid = self.library.index_for_incline(req.incline_deg) \
                if math.isfinite(req.incline_deg) else 0
        if tid >= len(self.solvers):
            self.dropped += 1
            return None
        solver = self.solvers[tid]
        if not (math.isfinite(req.theta_c) and math.isfinite(req.L)
                and 0.0 <= req.phase_time <= solver.traj.T):
            self.dropped += 1
            return None
        t0 = time.perf_counter()
        u, conv = solver.torque(AlipState(req.theta_c, req.L), req.phase_time)
        us = int(round((time.perf_counter() - t0) * 1e6))
        self.handled += 1
        return MpcResponse(req.seq, u, min(us, 0xFFFFFFFF), conv).encode()

    def serve_forever(self, poll: float = 0.1):
        self.sock.settimeout(poll)
        while not self._stop.is_set():
            try:
                data, addr = self.sock.recvfrom(2048)
            except socket.timeout:
                continue
            except OSError:
                if self._stop.is_set():
                    break
                raise
            out = self.handle(data)
            if out is not None:
                try:
                    self.sock.sendto(out, addr)
                except OSError as exc:
                    log.warning("send to %s failed: %s", addr, exc)

    def shutdown(self):
        self._stop.set()

    def close(self):
        self._stop.set()
        self.sock.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def start_thread(self) -> threading.Thread:
        th = threading.Thread(target=self.serve_forever, daemon=True)
        th.start()
        return th


def serve(bind, library: TrajectoryLibrary, cfg: MpcConfig = MpcConfig(),
          params: RobotParams = RobotParams(), ready=None):
    """Run a server until interrupted.  `ready(address)` is called once bound."""
    with MpcServer(bind, library, cfg, params) as srv:
        if ready is not None:
            ready(srv.address)
        try:
            srv.serve_forever()
        except KeyboardInterrupt:
            pass


class MpcClient:
    """Synchronous client with staleness rejection and a hold-last policy.

    After a timeout the previous torque is reused for up to `hold_limit`
    consecutive misses, then zero is returned until a fresh response
    arrives.  Socket errors count as timeouts.
    """

    def __init__(self, server, timeout_us: int = 2000, hold_limit: int = 10):
        if isinstance(server, str):
            server = parse_address(server)
        if not timeout_us > 0:
            raise ValueError("timeout must be positive")
        self.server = server
        self.timeout_us = timeout_us
        self.hold_limit = hold_limit
        self.sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self.seq = 0
        self.last_torque = 0.0
        self.misses = 0
        self.stale = 0
        self.status = "idle"
        self.last_rtt_us = None
        self.last_compute_us = None
        self.last_converged = None
        self._t0 = time.monotonic_ns()

    def _now_us(self):
        return (time.monotonic_ns() - self._t0) // 1000

    def close(self):
        self.sock.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def query(self, state: AlipState, phase_time: float, traj_id: int,
              incline_deg: float = 0.0) -> float:
        self.seq = (self.seq + 1) & 0xFFFFFFFF
        sent = self._now_us()
        req = MpcRequest(self.seq, sent, traj_id, state.theta_c, state.L, phase_time,
                         incline_deg)
        deadline = time.perf_counter() + self.timeout_us * 1e-6
        try:
            self.sock.sendto(req.encode(), self.server)
            while True:
                remaining = deadline - time.perf_counter()
                if remaining <= 0:
                    break
                self.sock.settimeout(remaining)
                data = self.sock.recv(2048)
                try:
                    resp = MpcResponse.decode(data)
                except WireFormatError:
                    continue
                if resp.seq != self.seq:
                    self.stale += 1
                    continue
                self.last_rtt_us = self._now_us() - sent
                self.last_compute_us = resp.compute_time_us
                self.last_converged = resp.converged
                self.last_torque = resp.torque
                self.misses = 0
                self.status = "ok"
                return resp.torque
        except OSError:
            pass
        self.misses += 1
        self.last_rtt_us = None
        if self.misses <= self.hold_limit:
            self.status = "hold"
            return self.last_torque
        self.status = "zero"
        self.last_torque = 0.0
        return 0.0


def client_query(server, state: AlipState, phase: float, traj_id: int,
                 timeout_us: int = 2000, client: Optional[MpcClient] = None,
                 incline_deg: float = 0.0) -> float:
    """One request through `client`, or through a throwaway client."""
    if client is not None:
        return client.query(state, phase, traj_id, incline_deg)
    with MpcClient(server, timeout_us) as c:
        return c.query(state, phase, traj_id, incline_deg)


@dataclass(frozen=True)
class ProbeReport:
    requests: int
    responses: int
    rtt_p50_us: float
    rtt_p99_us: float
    rtt_max_us: float
    compute_p50_us: float
    compute_p99_us: float

    @property
    def loss_pct(self) -> float:
        if self.requests == 0:
            return 0.0
        return 100.0 * (self.requests - self.responses) / self.requests

    def format(self) -> str:
        rows = [
            ("requests", f"{self.requests}"),
            ("responses", f"{self.responses}"),
            ("loss_pct", f"{self.loss_pct:.3f}"),
            ("rtt_p50_us", f"{self.rtt_p50_us:.1f}"),
            ("rtt_p99_us", f"{self.rtt_p99_us:.1f}"),
            ("rtt_max_us", f"{self.rtt_max_us:.1f}"),
            ("compute_p50_us", f"{self.compute_p50_us:.1f}"),
            ("compute_p99_us", f"{self.compute_p99_us:.1f}"),
        ]
        return "".join(f"{k} {v}\n" for k, v in rows)


def latency_probe(server, rate: float, duration: float, seed: int = 0,
                  traj_id: int = TRAJ_BY_INCLINE) -> ProbeReport:
    """Fixed-rate stream of synthetic walking states.

    A request counts as lost when no matching response arrives before the
    next one is due.
    """
    if not (rate > 0 and duration > 0):
        raise ValueError("rate and duration must be positive")
    period = 1.0 / rate
    n = int(round(rate * duration))
    rng = np.random.default_rng(seed)
    th = rng.uniform(-0.15, 0.15, n)
    L = rng.uniform(10.0, 20.0, n)
    ph = rng.uniform(0.0, 0.38, n)
    rtt, comp = [], []
    with MpcClient(server, timeout_us=int(period * 1e6), hold_limit=0) as c:
        t_next = time.perf_counter()
        for i in range(n):
            c.query(AlipState(th[i], L[i]), ph[i], traj_id, 0.0)
            if c.status == "ok":
                rtt.append(c.last_rtt_us)
                comp.append(c.last_compute_us)
            t_next += period
            delay = t_next - time.perf_counter()
            if delay > 0:
                time.sleep(delay)

    def pct(a, q):
        return float(np.percentile(a, q)) if a else float("nan")

    return ProbeReport(n, len(rtt), pct(rtt, 50), pct(rtt, 99),
                       float(max(rtt)) if rtt else float("nan"),
                       pct(comp, 50), pct(comp, 99))
