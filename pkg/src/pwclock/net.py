"""UDP agents that flood PWC-stamped datagrams, and a send/receive cost probe.

Each agent runs a send loop and a receive loop that share one :class:`PwcClock`.
Every stamp is pushed, while the clock lock is still held, onto a single queue
drained by a collector thread; queue order is therefore stamping order. The
collector keeps the statistics and appends the event log in the oracle's line
format, flushing once a second.
"""

from __future__ import annotations

import json
import queue
import random
import socket
import struct
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

from .clock import (
    Delayed, Discarded, EventKind, OverflowPolicy, PhysicalClockSource, PwcClock, SystemClockSource,
    bits_needed, lpt_of,
)
from .oracle import format_line

MAGIC = b"PW"
VERSION = 1
HEADER = struct.Struct(">2sBHQQB")
HEADER_SIZE = HEADER.size  # 22
MAX_PAYLOAD = 65507  # largest IPv4 UDP payload
MAX_U64 = (1 << 64) - 1


class WireError(ValueError):
    pass


class NetError(RuntimeError):
    pass


@dataclass(frozen=True)
class WireMessage:
    sender_id: int
    seq: int
    pwc: int
    u: int
    payload_size: int = HEADER_SIZE

    def __post_init__(self):
        if not 0 <= self.sender_id < 1 << 16:
            raise WireError("sender_id must fit in 16 bits")
        if not 0 <= self.seq <= MAX_U64 or not 0 <= self.pwc <= MAX_U64:
            raise WireError("seq and pwc must fit in 64 bits")
        if not 0 <= self.u < 256:
            raise WireError("u must fit in one byte")
        if not HEADER_SIZE <= self.payload_size <= MAX_PAYLOAD:
            raise WireError(f"payload_size must be in [{HEADER_SIZE}, {MAX_PAYLOAD}]")

    def encode(self) -> bytes:
        head = HEADER.pack(MAGIC, VERSION, self.sender_id, self.seq, self.pwc, self.u)
        return head + bytes(self.payload_size - HEADER_SIZE)

    @classmethod
    def decode(cls, buf: bytes) -> "WireMessage":
        if len(buf) < HEADER_SIZE:
            raise WireError(f"datagram of {len(buf)} bytes is shorter than the header")
        magic, version, sender, seq, pwc, u = HEADER.unpack_from(buf)
        if magic != MAGIC:
            raise WireError("bad magic")
        if version != VERSION:
            raise WireError(f"unsupported version {version}")
        return cls(sender, seq, pwc, u, len(buf))


Endpoint = tuple[str, int]


@dataclass
class AgentConfig:
    agent_id: int
    listen: Endpoint
    peers: list[tuple[int, Endpoint]]
    u: int = 8
    policy: OverflowPolicy = field(default_factory=OverflowPolicy)
    rate_limit: Optional[float] = None  # msgs/s; None sends as fast as possible
    duration: float = 10.0
    payload_size: int = HEADER_SIZE
    log_path: Optional[str] = None
    report_path: Optional[str] = None
    clock: str = "monotonic"  # or "realtime" for agents on different hosts
    seed: int = 0
    drain: float = 0.5  # seconds the receive loop keeps listening after sending stops

    def __post_init__(self):
        self.listen = (str(self.listen[0]), int(self.listen[1]))
        self.peers = [(int(a), (str(e[0]), int(e[1]))) for a, e in self.peers]
        if isinstance(self.policy, (str, dict)):
            self.policy = OverflowPolicy(self.policy) if isinstance(self.policy, str) else OverflowPolicy(**self.policy)
        if not 0 <= self.agent_id < 1 << 16:
            raise NetError("agent_id must fit in 16 bits")
        ids = [a for a, _ in self.peers] + [self.agent_id]
        if len(set(ids)) != len(ids):
            raise NetError("agent ids must be unique")
        if not self.peers:
            raise NetError("an agent needs at least one peer")
        if not HEADER_SIZE <= self.payload_size <= MAX_PAYLOAD:
            raise NetError(f"payload_size must be in [{HEADER_SIZE}, {MAX_PAYLOAD}]")
        if self.duration <= 0:
            raise NetError("duration must be > 0")
        if self.rate_limit is not None and self.rate_limit <= 0:
            raise NetError("rate_limit must be > 0")


@dataclass
class AgentReport:
    agent_id: int
    sent: int = 0
    received: int = 0
    dropped: int = 0
    histogram: list[int] = field(default_factory=lambda: [0] * 65)
    delayed: int = 0
    discarded: int = 0
    u_mismatch: int = 0
    edge_violations: int = 0  # receives stamped at or below the message's pwc
    non_increasing: int = 0  # issued timestamps that did not exceed the previous one

    def to_json(self) -> str:
        return json.dumps(self.__dict__, sort_keys=True)


# collector message tags
_EV, _DROP, _DISCARD, _STOP = range(4)


def _collector(q: queue.SimpleQueue, report: AgentReport, u: int, log_file) -> None:
    last = -1
    n = 0
    lines: list[str] = []
    next_flush = time.monotonic() + 1.0
    while True:
        try:
            item = q.get(timeout=0.2)
        except queue.Empty:
            item = None
        if item is not None:
            tag = item[0]
            if tag == _STOP:
                break
            if tag == _DROP:
                report.dropped += 1
            elif tag == _DISCARD:
                report.discarded += 1
            else:
                _, kind, ts, clpt, pt, sender, seq, msg_pwc, msg_u, waited = item
                if ts <= last:
                    report.non_increasing += 1
                last = ts
                report.histogram[bits_needed(lpt_of(ts, u))] += 1
                if waited:
                    report.delayed += 1
                if kind == "S":
                    report.sent += 1
                else:
                    report.received += 1
                    if msg_pwc >= ts:
                        report.edge_violations += 1
                    if msg_u != u:
                        report.u_mismatch += 1
                if log_file is not None:
                    lines.append(format_line(n, report.agent_id, kind, (), ts, clpt, pt, None, f"{sender}:{seq}"))
                n += 1
        if log_file is not None and time.monotonic() >= next_flush:
            log_file.write("".join(lines))
            log_file.flush()
            lines.clear()
            next_flush = time.monotonic() + 1.0
    if log_file is not None:
        log_file.write("".join(lines))
        log_file.flush()


def _stamp(clock: PwcClock, kind: EventKind, incoming, policy, q, make_item):
    """Stamp and enqueue under the clock lock so queue order equals stamping order."""
    with clock.lock:
        out = clock.guarded_stamp(kind, incoming, policy)
        if isinstance(out, Discarded):
            q.put((_DISCARD,))
            return None
        pt = clock.source.now()
        ts = out.ts
        q.put(make_item(ts, clock.clpt(), pt, isinstance(out, Delayed)))
        return ts


def run_agent(cfg: AgentConfig, source: Optional[PhysicalClockSource] = None,
              sock: Optional[socket.socket] = None) -> AgentReport:
    """Flood peers for ``cfg.duration`` seconds while stamping everything received."""
    source = source or SystemClockSource(cfg.clock)
    clock = PwcClock(cfg.u, source)
    report = AgentReport(cfg.agent_id)
    q: queue.SimpleQueue = queue.SimpleQueue()
    rng = random.Random(cfg.seed)
    if sock is None:
        sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        sock.setsockopt(socket.SOL_SOCKET, socket.SO_RCVBUF, 1 << 22)
        sock.bind(cfg.listen)
    sock.settimeout(0.05)
    log_file = open(cfg.log_path, "w") if cfg.log_path else None
    collector = threading.Thread(target=_collector, args=(q, report, cfg.u, log_file), daemon=True)
    collector.start()
    stop_at = time.monotonic() + cfg.duration
    sending_done = threading.Event()

    def send_loop():
        seq = 0
        gap = 1.0 / cfg.rate_limit if cfg.rate_limit else 0.0
        next_t = time.monotonic()
        peers = [e for _, e in cfg.peers]
        while True:
            now = time.monotonic()
            if now >= stop_at:
                break
            if gap:
                if now < next_t:
                    time.sleep(min(next_t - now, 0.01))
                    continue
                next_t += gap
            dest = peers[rng.randrange(len(peers))]
            s = seq
            ts = _stamp(clock, EventKind.SEND, None, cfg.policy, q,
                        lambda ts, c, pt, w: (_EV, "S", ts, c, pt, cfg.agent_id, s, -1, cfg.u, w))
            if ts is None:
                continue
            # the seq is spent once the send is stamped, even if the datagram is lost
            seq += 1
            try:
                sock.sendto(WireMessage(cfg.agent_id, s, ts, cfg.u, cfg.payload_size).encode(), dest)
            except OSError:
                pass
        sending_done.set()

    def recv_loop():
        while True:
            try:
                buf, _ = sock.recvfrom(MAX_PAYLOAD)
            except socket.timeout:
                if sending_done.is_set() and time.monotonic() >= stop_at + cfg.drain:
                    break
                continue
            except OSError:
                break
            try:
                m = WireMessage.decode(buf)
            except WireError:
                q.put((_DROP,))
                continue
            _stamp(clock, EventKind.RECEIVE, m.pwc, cfg.policy, q,
                   lambda ts, c, pt, w: (_EV, "R", ts, c, pt, m.sender_id, m.seq, m.pwc, m.u, w))

    threads = [threading.Thread(target=send_loop, daemon=True), threading.Thread(target=recv_loop, daemon=True)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    q.put((_STOP,))
    collector.join()
    sock.close()
    if log_file is not None:
        log_file.close()
    if cfg.report_path:
        with open(cfg.report_path, "w") as f:
            f.write(report.to_json() + "\n")
    return report


# --- send/receive cost probe ----------------------------------------------------------

MIN_MESSAGES = 10_000


class UdpTransport:
    def __init__(self, bind: Endpoint = ("127.0.0.1", 0)):
        self.sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self.sock.bind(bind)
        self.sock.settimeout(0.05)

    def send(self, payload: bytes, dest: Endpoint) -> None:
        self.sock.sendto(payload, dest)

    def recv(self) -> Optional[bytes]:
        try:
            return self.sock.recv(MAX_PAYLOAD)
        except socket.timeout:
            return None

    def close(self) -> None:
        self.sock.close()


class SyntheticTransport:
    """A transport whose every operation costs a fixed virtual time; used to check the fit."""

    def __init__(self, per_msg_ns: int = 1000, per_byte_ns: float = 0.0):
        self.per_msg_ns = per_msg_ns
        self.per_byte_ns = per_byte_ns
        self.now_ns = 0

    def clock(self) -> int:
        return self.now_ns

    def _spend(self, size: int) -> None:
        self.now_ns += self.per_msg_ns + int(round(self.per_byte_ns * size))

    def send(self, payload: bytes, dest) -> None:
        self._spend(len(payload))

    def recv(self) -> Optional[bytes]:
        self._spend(HEADER_SIZE)
        return bytes(HEADER_SIZE)


@dataclass(frozen=True)
class DeltaFit:
    const1_ns: float  # per-message cost
    const2_ns_per_byte: float
    per_message_ns: dict[int, float]
    counts: dict[int, int]


def fit_line(points: dict[int, float]) -> tuple[float, float]:
    """Least-squares ``y = c1 + c2 * x``; with two sizes this is the two-point line."""
    xs = sorted(points)
    if len(xs) < 2:
        raise NetError("need at least two distinct payload sizes")
    n = len(xs)
    mx = sum(xs) / n
    my = sum(points[x] for x in xs) / n
    sxx = sum((x - mx) ** 2 for x in xs)
    c2 = sum((x - mx) * (points[x] - my) for x in xs) / sxx
    return my - c2 * mx, c2


def measure_delta(role: str, peers: Sequence[Endpoint], duration_s: float, sizes: Sequence[int] = (1, 1400),
                  transport=None, clock: Optional[Callable[[], int]] = None) -> DeltaFit:
    """Per-message send (or receive) cost as a line in the payload size.

    The send role floods ``peers`` for ``duration_s`` per size; the receive role
    counts what arrives in the same window. ``clock`` returns nanoseconds.
    """
    if role not in ("send", "receive"):
        raise NetError("role must be 'send' or 'receive'")
    if len(set(sizes)) != len(sizes) or len(sizes) < 2:
        raise NetError("need at least two distinct payload sizes")
    if role == "send" and not peers:
        raise NetError("send role needs peers")
    own = transport is None
    transport = transport or UdpTransport()
    clock = clock or getattr(transport, "clock", None) or time.perf_counter_ns
    limit = int(duration_s * 1e9)
    per_msg, counts = {}, {}
    try:
        for size in sizes:
            payload = bytes(size)
            count = 0
            start = clock()
            elapsed = 0
            while elapsed < limit:
                if role == "send":
                    transport.send(payload, peers[count % len(peers)])
                    count += 1
                elif transport.recv() is not None:
                    count += 1
                elapsed = clock() - start
            if count < MIN_MESSAGES:
                raise NetError(f"only {count} messages at size {size}; need >= {MIN_MESSAGES} for a stable estimate")
            per_msg[size] = elapsed / count
            counts[size] = count
    finally:
        if own:
            transport.close()
    c1, c2 = fit_line(per_msg)
    return DeltaFit(c1, c2, per_msg, counts)
