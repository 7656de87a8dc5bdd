"""Line-delimited JSON solver endpoint and its client.

Each request is one JSON object per line::

    {"kind":"pecc","rd_des":0.5,"e_bpm":160.0,"omega":0.2}

and is answered by exactly one JSON line.  Floats are written with Python's
shortest round-trip repr, so a remote solution is bit-identical to the local
one.
"""

from __future__ import annotations

import json
import logging
import math
import socket
import socketserver
import threading
import time
from dataclasses import dataclass
from typing import Optional

from .profiles import ControlPair, LookupTable
from .solver import DEFAULT_OMEGA, InfeasibleError, Solution, SolveRequest, solve_ee, solve_pecc

log = logging.getLogger(__name__)


class TransportError(OSError):
    """The solver could not be reached or did not answer in time."""


class RemoteError(RuntimeError):
    """The server answered with an error other than infeasibility."""


@dataclass(frozen=True)
class WireRequest:
    kind: str  # "pecc" or "ee"
    rd_des: float
    e_bpm: float = 0.0
    omega: Optional[float] = None

    def encode(self) -> bytes:
        doc = {"kind": self.kind, "rd_des": self.rd_des}
        if self.kind == "pecc":
            doc["e_bpm"] = self.e_bpm
        if self.omega is not None:
            doc["omega"] = self.omega
        return (json.dumps(doc, separators=(",", ":")) + "\n").encode()

    @classmethod
    def decode(cls, line: bytes | str) -> "WireRequest":
        doc = json.loads(line)
        if not isinstance(doc, dict):
            raise ValueError("request must be a JSON object")
        kind = doc.get("kind")
        if kind not in ("pecc", "ee"):
            raise ValueError(f"kind must be 'pecc' or 'ee', got {kind!r}")
        unknown = set(doc) - {"kind", "rd_des", "e_bpm", "omega"}
        if unknown:
            raise ValueError(f"unknown request fields {sorted(unknown)}")
        if "rd_des" not in doc or (kind == "pecc" and "e_bpm" not in doc):
            raise ValueError("missing rd_des or e_bpm")
        numbers = {k: doc[k] for k in ("rd_des", "e_bpm", "omega") if doc.get(k) is not None}
        for key, value in numbers.items():
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ValueError(f"{key} must be a number")
        return cls(kind, float(doc["rd_des"]), float(doc.get("e_bpm", 0.0)),
                   None if doc.get("omega") is None else float(doc["omega"]))


def encode_response(sol: Optional[Solution] = None, error: Optional[str] = None,
                    min_rd: Optional[float] = None) -> bytes:
    if sol is None:
        doc = {"ok": False, "error": error}
        if min_rd is not None:
            doc["min_rd"] = min_rd
    else:
        doc = {"ok": True, "frequency": sol.pair.frequency, "max_speed": sol.pair.max_speed,
               "epsilon": sol.epsilon, "objective": sol.objective,
               "energy_per_meter": sol.energy_per_meter_est, "rd_est": sol.rd_est, "kind": sol.kind}
    return (json.dumps(doc, separators=(",", ":")) + "\n").encode()


def decode_response(line: bytes, rd_des: float) -> Solution:
    try:
        doc = json.loads(line)
    except ValueError as exc:
        raise RemoteError(f"malformed response: {exc}") from None
    if not doc.get("ok"):
        if doc.get("error") == "infeasible":
            raise InfeasibleError(rd_des, doc.get("min_rd", math.nan))
        raise RemoteError(doc.get("error") or "unknown server error")
    return Solution(ControlPair(doc["frequency"], doc["max_speed"]), doc["epsilon"], doc["objective"],
                    doc["energy_per_meter"], doc["rd_est"], doc.get("kind", "pecc"))


def handle_line(line: bytes, table: LookupTable, omega: float = DEFAULT_OMEGA) -> bytes:
    """Answer one request line; never raises."""
    try:
        req = WireRequest.decode(line)
        if req.kind == "ee":
            if not req.rd_des > 0:
                raise ValueError(f"rd_des must be positive, got {req.rd_des}")
            sol = solve_ee(table, req.rd_des)
        else:
            sol = solve_pecc(table, SolveRequest(req.rd_des, req.e_bpm,
                                                 omega if req.omega is None else req.omega))
    except InfeasibleError as exc:
        return encode_response(error="infeasible", min_rd=exc.min_rd)
    except ValueError as exc:
        return encode_response(error=f"bad request: {exc}")
    return encode_response(sol)


class _Handler(socketserver.StreamRequestHandler):
    def handle(self):
        for line in self.rfile:
            if not line.strip():
                continue
            self.wfile.write(handle_line(line, self.server.table, self.server.omega))
            self.wfile.flush()


class SolverServer(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, address: tuple[str, int], table: LookupTable, omega: float = DEFAULT_OMEGA):
        self.table = table
        self.omega = omega
        super().__init__(address, _Handler)


def parse_address(addr: str) -> tuple[str, int]:
    host, sep, port = addr.rpartition(":")
    if not sep or not port.isdigit():
        raise ValueError(f"address must be host:port, got {addr!r}")
    return host or "127.0.0.1", int(port)


def start_server(bind_address: str, table: LookupTable, omega: float = DEFAULT_OMEGA) -> SolverServer:
    """Bind and serve from a background thread; call ``shutdown()`` to stop."""
    server = SolverServer(parse_address(bind_address), table, omega)
    threading.Thread(target=server.serve_forever, daemon=True).start()
    return server


def serve(bind_address: str, table: LookupTable, omega: float = DEFAULT_OMEGA) -> None:
    with SolverServer(parse_address(bind_address), table, omega) as server:
        host, port = server.server_address[:2]
        log.info("solver listening on %s:%d", host, port)
        try:
            server.serve_forever()
        except KeyboardInterrupt:
            pass


class SolverClient:
    """Persistent connection to a solver server.

    Usable as the ``solve`` hook of :func:`pecc.controller.init_controller`.
    """

    def __init__(self, address: str, timeout: float = 5.0, omega: Optional[float] = None):
        self.address = parse_address(address)
        self.timeout = timeout
        self.omega = omega
        self.last_latency = math.nan
        self._sock: Optional[socket.socket] = None
        self._reader = None

    def _connect(self):
        try:
            self._sock = socket.create_connection(self.address, timeout=self.timeout)
        except OSError as exc:
            raise TransportError(f"cannot reach solver at {self.address[0]}:{self.address[1]}: {exc}") from None
        self._reader = self._sock.makefile("rb")

    def close(self):
        if self._sock is not None:
            self._reader.close()
            self._sock.close()
            self._sock = self._reader = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def request(self, req: WireRequest) -> Solution:
        if self._sock is None:
            self._connect()
        start = time.perf_counter()
        try:
            self._sock.sendall(req.encode())
            line = self._reader.readline()
        except OSError as exc:
            self.close()
            raise TransportError(f"solver request failed: {exc}") from None
        if not line:
            self.close()
            raise TransportError("solver closed the connection")
        self.last_latency = time.perf_counter() - start
        return decode_response(line, req.rd_des)

    def __call__(self, table: LookupTable, req: SolveRequest) -> Solution:
        return self.request(WireRequest("pecc", req.rd_des, req.e_bpm, req.omega))


def solve_remote(address: str, req: WireRequest, timeout: float = 5.0) -> tuple[Solution, float]:
    """One-shot request; returns the solution and the round-trip time in seconds."""
    with SolverClient(address, timeout) as client:
        sol = client.request(req)
        return sol, client.last_latency
