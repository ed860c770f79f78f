"""Master-worker trajectory farm over reliable ordered point-to-point
transports.

Topology: n workers (ranks 0..n-1) plus one computation-free master (by
convention the highest rank).  The master sends Init (master seed, problem
digest, assigned trajectory count) and Compute to every worker, collects
exactly one Result or Error per rank, then sends Shutdown.  Workers derive
their random stream from (master_seed, rank), run their assignment
sequentially, average locally and reply with a single partial result.  The
final reduction averages partials in rank order, so the outcome does not
depend on arrival order.

Wire format (TCP transport), all integers little-endian:

    frame   := u32 length | payload
    payload := u8 version (=1) | u8 tag | body
    tags    := 0 Hello{u32 rank}           (connection handshake only)
               1 Init{u64 master_seed, u64 digest, u32 assigned_count}
               2 Compute{}
               3 Result{trajectory result, see below}
               4 Error{u32 rank, u32 nbytes, utf-8 description}
               5 Shutdown{}
    result  := u32 n_expect | u32 n_points | u64 n_trajectories
               | u8 has_jumps | f64 times[n_points]
               | f64 values[n_expect * n_points]
               | if has_jumps: u32 n_jumps | (f64 t, u32 channel)[n_jumps]

Floats travel as raw IEEE-754 bit patterns, which is what makes results
bitwise identical across the in-process and TCP transports.  The pipe
transport used by ``--local-workers`` sends the same payload bytes through
``multiprocessing`` connections.
"""

from __future__ import annotations

import multiprocessing as mp
import socket
import struct
import time
import queue as queue_mod
from dataclasses import dataclass
from hashlib import blake2b

import numpy as np

from . import rng as rng_mod
from .ode import ADAMS, BDF, OdeFailure
from .trajectory import (QuantumProblem, TrajectoryResult,
                         average_trajectories, run_single_trajectory)

__all__ = [
    "NodeId", "Hello", "Init", "Compute", "Result", "Error", "Shutdown",
    "ClusterError", "TransportClosed", "QueueTransport", "PipeTransport",
    "TcpTransport", "encode_message", "decode_message", "problem_digest",
    "partition_trajectories", "run_worker", "run_master", "run_inline",
    "run_local_farm", "tcp_listen", "tcp_connect",
]

WIRE_VERSION = 1
MASTER, WORKER = "master", "worker"


@dataclass(frozen=True)
class NodeId:
    rank: int
    role: str

    def __post_init__(self):
        if self.rank < 0:
            raise ValueError("rank must be non-negative")
        if self.role not in (MASTER, WORKER):
            raise ValueError(f"unknown role {self.role!r}")


@dataclass(frozen=True)
class Hello:
    rank: int


@dataclass(frozen=True)
class Init:
    master_seed: int
    problem_digest: int
    assigned_count: int


@dataclass(frozen=True)
class Compute:
    pass


@dataclass(frozen=True)
class Result:
    partial: TrajectoryResult


@dataclass(frozen=True)
class Error:
    rank: int
    description: str


@dataclass(frozen=True)
class Shutdown:
    pass


class TransportClosed(Exception):
    """The peer closed its end of the channel."""


class ClusterError(RuntimeError):
    def __init__(self, kind: str, message: str):
        super().__init__(message)
        self.kind = kind  # "worker-numeric" | "digest" | "transport" | "protocol"


# -- codec -------------------------------------------------------------------

_TAGS = {Hello: 0, Init: 1, Compute: 2, Result: 3, Error: 4, Shutdown: 5}


def _encode_result(res: TrajectoryResult) -> bytes:
    n_expect, n_points = res.values.shape
    parts = [struct.pack("<IIQB", n_expect, n_points, res.n_trajectories,
                         1 if res.jumps is not None else 0),
             np.ascontiguousarray(res.times, dtype="<f8").tobytes(),
             np.ascontiguousarray(res.values, dtype="<f8").tobytes()]
    if res.jumps is not None:
        parts.append(struct.pack("<I", len(res.jumps)))
        for t, k in res.jumps:
            parts.append(struct.pack("<dI", t, k))
    return b"".join(parts)


def _decode_result(body: bytes, off: int) -> TrajectoryResult:
    n_expect, n_points, n_traj, has_jumps = struct.unpack_from("<IIQB", body, off)
    off += struct.calcsize("<IIQB")
    times = np.frombuffer(body, "<f8", n_points, off).copy()
    off += 8 * n_points
    values = np.frombuffer(body, "<f8", n_expect * n_points, off)
    values = values.reshape(n_expect, n_points).copy()
    off += 8 * n_expect * n_points
    jumps = None
    if has_jumps:
        (n_jumps,) = struct.unpack_from("<I", body, off)
        off += 4
        jumps = []
        for _ in range(n_jumps):
            t, k = struct.unpack_from("<dI", body, off)
            off += 12
            jumps.append((t, int(k)))
    return TrajectoryResult(times, values, int(n_traj), jumps)


def encode_message(msg) -> bytes:
    tag = _TAGS[type(msg)]
    head = struct.pack("<BB", WIRE_VERSION, tag)
    if isinstance(msg, Hello):
        return head + struct.pack("<I", msg.rank)
    if isinstance(msg, Init):
        return head + struct.pack("<QQI", msg.master_seed, msg.problem_digest,
                                  msg.assigned_count)
    if isinstance(msg, (Compute, Shutdown)):
        return head
    if isinstance(msg, Result):
        return head + _encode_result(msg.partial)
    if isinstance(msg, Error):
        raw = msg.description.encode("utf-8")
        return head + struct.pack("<II", msg.rank, len(raw)) + raw
    raise TypeError(f"cannot encode {msg!r}")


def decode_message(payload: bytes):
    version, tag = struct.unpack_from("<BB", payload, 0)
    if version != WIRE_VERSION:
        raise ClusterError("protocol", f"unsupported wire version {version}")
    if tag == 0:
        (rank,) = struct.unpack_from("<I", payload, 2)
        return Hello(int(rank))
    if tag == 1:
        seed, digest, count = struct.unpack_from("<QQI", payload, 2)
        return Init(int(seed), int(digest), int(count))
    if tag == 2:
        return Compute()
    if tag == 3:
        return Result(_decode_result(payload, 2))
    if tag == 4:
        rank, nbytes = struct.unpack_from("<II", payload, 2)
        raw = payload[10:10 + nbytes]
        return Error(int(rank), raw.decode("utf-8"))
    if tag == 5:
        return Shutdown()
    raise ClusterError("protocol", f"unknown message tag {tag}")


# -- problem digest ------------------------------------------------------------


def problem_digest(problem: QuantumProblem) -> int:
    """64-bit digest of the problem definition, used to detect
    configuration skew between the launcher invocations of master and
    workers.  Time-dependent callbacks cannot be hashed and contribute a
    marker byte only."""
    h = blake2b(digest_size=8)
    h.update(b"MCWFPROB1")
    h.update(struct.pack("<IddI", problem.dim, problem.t_from, problem.t_to,
                         problem.n_steps))
    cfg = problem.ode
    h.update(struct.pack("<BddIQ d", 0 if cfg.method == ADAMS else 1,
                         cfg.rtol, cfg.atol, cfg.max_order, cfg.max_steps,
                         np.nan if cfg.initial_step is None else cfg.initial_step))
    h.update(struct.pack("<B", 1 if problem.options.log_jumps else 0))
    if problem.generator is None:
        h.update(b"\x01")  # callback right side: not hashable
    else:
        h.update(b"\x00")
        _update_csr(h, problem.generator.g)
    h.update(struct.pack("<I", len(problem.collapse_csr)))
    for m in problem.collapse_csr:
        _update_csr(h, m)
    h.update(struct.pack("<I", len(problem.expect_csr)))
    for m in problem.expect_csr:
        _update_csr(h, m)
    h.update(np.ascontiguousarray(problem.psi0, dtype="<c16").tobytes())
    return int.from_bytes(h.digest(), "little")


def _update_csr(h, m):
    h.update(struct.pack("<I", m.n))
    h.update(np.ascontiguousarray(m.row_ptr, dtype="<i8").tobytes())
    h.update(np.ascontiguousarray(m.col_ind, dtype="<i8").tobytes())
    h.update(np.ascontiguousarray(m.values, dtype="<c16").tobytes())


# -- transports ----------------------------------------------------------------

_CLOSED = object()


class QueueTransport:
    """In-process channel backed by a pair of queues; used by the protocol
    tests, where messages stay Python objects."""

    def __init__(self, inbox, outbox):
        self._inbox = inbox
        self._outbox = outbox

    @staticmethod
    def pair():
        a, b = queue_mod.Queue(), queue_mod.Queue()
        return QueueTransport(a, b), QueueTransport(b, a)

    def send(self, msg):
        self._outbox.put(msg)

    def recv(self):
        item = self._inbox.get()
        if item is _CLOSED:
            raise TransportClosed
        return item

    def close(self):
        self._outbox.put(_CLOSED)


class PipeTransport:
    """Multiprocessing pipe carrying encoded payload bytes."""

    def __init__(self, conn):
        self._conn = conn

    def send(self, msg):
        self._conn.send_bytes(encode_message(msg))

    def recv(self):
        try:
            return decode_message(self._conn.recv_bytes())
        except (EOFError, OSError) as exc:
            raise TransportClosed from exc

    def close(self):
        self._conn.close()


class TcpTransport:
    """Socket carrying length-prefixed frames in the documented format."""

    def __init__(self, sock):
        self._sock = sock
        sock.settimeout(600.0)

    def send(self, msg):
        payload = encode_message(msg)
        self._sock.sendall(struct.pack("<I", len(payload)) + payload)

    def _recv_exact(self, nbytes):
        chunks = []
        while nbytes:
            try:
                chunk = self._sock.recv(nbytes)
            except (socket.timeout, OSError) as exc:
                raise TransportClosed from exc
            if not chunk:
                raise TransportClosed
            chunks.append(chunk)
            nbytes -= len(chunk)
        return b"".join(chunks)

    def recv(self):
        (length,) = struct.unpack("<I", self._recv_exact(4))
        return decode_message(self._recv_exact(length))

    def close(self):
        try:
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self._sock.close()


def tcp_listen(host: str, port: int, n_workers: int) -> dict[int, TcpTransport]:
    """Master side: accept n_workers connections, each announcing its rank
    with a Hello frame.  Returns transports keyed by rank."""
    server = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    server.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    server.bind((host, port))
    server.listen(n_workers)
    server.settimeout(600.0)
    transports: dict[int, TcpTransport] = {}
    try:
        while len(transports) < n_workers:
            try:
                sock, _addr = server.accept()
            except socket.timeout as exc:
                raise ClusterError("transport", "timed out waiting for workers") from exc
            t = TcpTransport(sock)
            hello = t.recv()
            if not isinstance(hello, Hello):
                raise ClusterError("protocol", f"expected Hello, got {hello!r}")
            if hello.rank in transports or not 0 <= hello.rank < n_workers:
                raise ClusterError("protocol", f"bad worker rank {hello.rank}")
            transports[hello.rank] = t
    finally:
        server.close()
    return transports


def tcp_connect(host: str, port: int, rank: int, retry_for: float = 60.0) -> TcpTransport:
    """Connect to the master, retrying while it is still starting up."""
    deadline = time.monotonic() + retry_for
    while True:
        try:
            sock = socket.create_connection((host, port), timeout=10.0)
            break
        except OSError as exc:
            if time.monotonic() >= deadline:
                raise ClusterError(
                    "transport", f"cannot reach master at {host}:{port}: {exc}") from exc
            time.sleep(0.05)
    t = TcpTransport(sock)
    t.send(Hello(rank))
    return t


# -- farm ----------------------------------------------------------------------


def partition_trajectories(n_total: int, n_workers: int) -> list[int]:
    """Uniform load: counts sum to n_total, max - min <= 1, remainder
    assigned to the lowest ranks."""
    if n_total < 1:
        raise ValueError("n_total must be positive")
    if n_workers < 1:
        raise ValueError("n_workers must be positive")
    base, rem = divmod(n_total, n_workers)
    return [base + 1 if r < rem else base for r in range(n_workers)]


def _zero_result(problem: QuantumProblem) -> TrajectoryResult:
    times = problem.time_grid()
    values = np.zeros((len(problem.expect_csr), times.shape[0]))
    return TrajectoryResult(times, values, 0,
                            [] if problem.options.log_jumps else None)


def _await_shutdown(transport):
    try:
        while not isinstance(transport.recv(), Shutdown):
            pass
    except TransportClosed:
        pass


def run_worker(transport, problem: QuantumProblem, rank: int) -> None:
    """Worker loop: Init (digest check), Compute, one Result, Shutdown."""
    try:
        init = transport.recv()
    except TransportClosed:
        return
    if not isinstance(init, Init):
        transport.send(Error(rank, f"protocol: expected Init, got {type(init).__name__}"))
        _await_shutdown(transport)
        return
    if init.problem_digest != problem_digest(problem):
        transport.send(Error(rank, "digest: problem definition mismatch with master"))
        _await_shutdown(transport)
        return
    msg = transport.recv()
    if not isinstance(msg, Compute):
        transport.send(Error(rank, f"protocol: expected Compute, got {type(msg).__name__}"))
        _await_shutdown(transport)
        return

    state = rng_mod.derive_stream(init.master_seed, rank)
    results = []
    try:
        for i in range(init.assigned_count):
            res, state = run_single_trajectory(problem, state)
            results.append(res)
    except (OdeFailure, ValueError, RuntimeError) as exc:
        transport.send(Error(rank, f"numeric: trajectory {len(results)} of rank {rank}: {exc}"))
        _await_shutdown(transport)
        return
    partial = average_trajectories(results) if results else _zero_result(problem)
    transport.send(Result(partial))
    _await_shutdown(transport)


def run_master(transports: dict[int, "QueueTransport"], problem: QuantumProblem,
               n_total: int, master_seed: int) -> TrajectoryResult:
    """Coordinate one run.  Results are averaged over a rank-indexed slot
    table, so the outcome is invariant under arrival order."""
    ranks = sorted(transports)
    counts = partition_trajectories(n_total, len(ranks))
    digest = problem_digest(problem)
    errors: list[Error] = []
    partials: dict[int, TrajectoryResult] = {}
    try:
        for r in ranks:
            transports[r].send(Init(master_seed, digest, counts[r]))
        for r in ranks:
            transports[r].send(Compute())
        for r in ranks:
            msg = transports[r].recv()
            if isinstance(msg, Result):
                if msg.partial.n_trajectories != counts[r]:
                    raise ClusterError(
                        "protocol", f"rank {r} returned {msg.partial.n_trajectories} "
                                    f"trajectories, assigned {counts[r]}")
                partials[r] = msg.partial
            elif isinstance(msg, Error):
                errors.append(msg)
            else:
                raise ClusterError("protocol", f"unexpected message from rank {r}: {msg!r}")
    except TransportClosed as exc:
        raise ClusterError("transport", "worker channel closed before its result arrived") from exc
    finally:
        for r in ranks:
            try:
                transports[r].send(Shutdown())
            except (TransportClosed, OSError):
                pass
    if errors:
        detail = "; ".join(f"rank {e.rank}: {e.description}" for e in errors)
        kind = "worker-numeric" if all(e.description.startswith("numeric:") for e in errors) \
            else ("digest" if any("digest:" in e.description for e in errors) else "protocol")
        raise ClusterError(kind, f"{len(errors)} worker(s) failed: {detail}")
    return average_trajectories([partials[r] for r in ranks])


def run_inline(problem: QuantumProblem, n_total: int, master_seed: int) -> TrajectoryResult:
    """Single-process path: the whole assignment runs on the rank-0 stream,
    which makes it bitwise identical to a 1-worker farm."""
    if n_total < 1:
        raise ValueError("n_total must be positive")
    state = rng_mod.derive_stream(master_seed, 0)
    results = []
    for _ in range(n_total):
        res, state = run_single_trajectory(problem, state)
        results.append(res)
    return average_trajectories(results)


def _pipe_worker_entry(conn, problem, rank):
    transport = PipeTransport(conn)
    try:
        run_worker(transport, problem, rank)
    finally:
        transport.close()


def run_local_farm(problem: QuantumProblem, n_total: int, n_workers: int,
                   master_seed: int) -> TrajectoryResult:
    """Farm over worker processes connected by pipes (same payload bytes as
    the TCP transport).  Requires a fork-capable platform."""
    ctx = mp.get_context("fork")
    transports: dict[int, PipeTransport] = {}
    procs = []
    for rank in range(n_workers):
        parent, child = ctx.Pipe()
        proc = ctx.Process(target=_pipe_worker_entry, args=(child, problem, rank),
                           daemon=True)
        proc.start()
        child.close()
        transports[rank] = PipeTransport(parent)
        procs.append(proc)
    try:
        return run_master(transports, problem, n_total, master_seed)
    finally:
        for t in transports.values():
            t.close()
        for p in procs:
            p.join(timeout=60.0)
            if p.is_alive():
                p.terminate()
