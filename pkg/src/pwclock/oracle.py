"""Ground-truth happened-before tracking with vector clocks.

The event log is columnar: one ``array`` per field so that multi-million event
logs from the simulator and the UDP harness stay compact. Vector clocks are
derived lazily in creation order, which is a topological order of the events.
"""

from __future__ import annotations

import io
from array import array
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np

KINDS = ("L", "S", "R")
LOCAL, SEND, RECEIVE = 0, 1, 2
FULL_PAIR_LIMIT = 10_000


class OracleError(ValueError):
    pass


@dataclass(frozen=True)
class EventRecord:
    id: int
    process: int
    kind: str
    preds: tuple[int, ...]
    pwc: int
    clpt: int
    pt: int
    vclock: tuple[int, ...]


@dataclass(frozen=True)
class Ccc:
    """A consecutive causal chain: each member happened before the next and is one larger."""

    events: tuple[int, ...]

    @property
    def r(self) -> int:
        return len(self.events)

    def __len__(self) -> int:
        return len(self.events)


@dataclass
class EventLog:
    n_processes: int
    u: int
    process: array = field(default_factory=lambda: array("q"))
    kind: array = field(default_factory=lambda: array("b"))
    pred_local: array = field(default_factory=lambda: array("q"))
    pred_remote: array = field(default_factory=lambda: array("q"))
    pwc: array = field(default_factory=lambda: array("q"))
    clpt: array = field(default_factory=lambda: array("q"))
    pt: array = field(default_factory=lambda: array("q"))
    # simulator-only instrumentation; -1 when unknown
    time: array = field(default_factory=lambda: array("q"))
    clpt_max: array = field(default_factory=lambda: array("q"))
    reset: array = field(default_factory=lambda: array("b"))
    # sampled clock readings, shape (n_samples, n_processes)
    samples: Optional[np.ndarray] = None
    sample_times: Optional[np.ndarray] = None

    def __post_init__(self):
        self._last = [-1] * self.n_processes
        for i, p in enumerate(self.process):
            self._last[p] = i
        self._vc: Optional[np.ndarray] = None
        self._vc_n = 0
        self._by_pwc: Optional[dict[int, list[int]]] = None

    def __len__(self) -> int:
        return len(self.pwc)

    def last_on(self, process: int) -> int:
        return self._last[process]

    def append(self, process, kind, pwc, clpt, pt, send=-1, *, time=-1, clpt_max=-1, reset=False) -> int:
        if not 0 <= process < self.n_processes:
            raise OracleError(f"process {process} out of range")
        n = len(self)
        if send >= 0:
            if kind != RECEIVE:
                raise OracleError("only receives have a remote predecessor")
            if send >= n or self.kind[send] != SEND or self.process[send] == process:
                raise OracleError(f"event {send} is not a send on another process")
        elif kind == RECEIVE:
            raise OracleError("a receive needs its matching send")
        self.process.append(process)
        self.kind.append(kind)
        self.pred_local.append(self._last[process])
        self.pred_remote.append(send)
        self.pwc.append(pwc)
        self.clpt.append(clpt)
        self.pt.append(pt)
        self.time.append(time)
        self.clpt_max.append(clpt_max)
        self.reset.append(1 if reset else 0)
        self._last[process] = n
        self._by_pwc = None
        return n

    @classmethod
    def from_arrays(cls, n_processes, u, **cols) -> "EventLog":
        log = cls(n_processes, u)
        n = len(cols["pwc"])
        for name, code in (("process", "q"), ("kind", "b"), ("pred_local", "q"), ("pred_remote", "q"),
                           ("pwc", "q"), ("clpt", "q"), ("pt", "q"), ("time", "q"),
                           ("clpt_max", "q"), ("reset", "b")):
            data = cols.get(name)
            if data is None:
                data = np.full(n, -1 if name not in ("reset",) else 0)
            setattr(log, name, array(code, np.asarray(data, dtype=np.int64 if code == "q" else np.int8).tobytes()))
        log.samples = cols.get("samples")
        log.sample_times = cols.get("sample_times")
        log.__post_init__()
        return log

    def col(self, name: str) -> np.ndarray:
        return np.frombuffer(getattr(self, name), dtype=np.int64 if getattr(self, name).typecode == "q" else np.int8).copy()

    def preds(self, i: int) -> tuple[int, ...]:
        return tuple(p for p in (self.pred_local[i], self.pred_remote[i]) if p >= 0)

    def vector_clocks(self) -> np.ndarray:
        n = len(self)
        buf = self._vc
        start = self._vc_n
        if buf is None or buf.shape[0] < n:
            grown = np.zeros((max(n, 2 * start, 16), self.n_processes), dtype=np.int64)
            if buf is not None:
                grown[:start] = buf[:start]
            buf = self._vc = grown
        for i in range(start, n):
            lp, rp = self.pred_local[i], self.pred_remote[i]
            row = buf[i]
            if lp >= 0:
                row[:] = buf[lp]
            if rp >= 0:
                np.maximum(row, buf[rp], out=row)
            row[self.process[i]] += 1
        self._vc_n = n
        return buf[:n]

    def __getitem__(self, i: int) -> EventRecord:
        if not 0 <= i < len(self):
            raise OracleError(f"unknown event id {i}")
        return EventRecord(i, self.process[i], KINDS[self.kind[i]], self.preds(i), self.pwc[i],
                           self.clpt[i], self.pt[i], tuple(int(x) for x in self.vector_clocks()[i]))

    def __iter__(self) -> Iterator[EventRecord]:
        for i in range(len(self)):
            yield self[i]

    def ids_with_pwc(self, value: int) -> list[int]:
        if self._by_pwc is None:
            idx: dict[int, list[int]] = {}
            for i, v in enumerate(self.pwc):
                idx.setdefault(v, []).append(i)
            self._by_pwc = idx
        return self._by_pwc.get(value, [])


def record_event(log: EventLog, process: int, kind: str, preds: Iterable[int], pwc: int, clpt: int, pt: int,
                 **extra) -> EventRecord:
    """Append an event; ``preds`` may list the previous event on the process and, for a receive, the send."""
    k = KINDS.index(kind) if isinstance(kind, str) else int(kind)
    preds = set(preds)
    prev = log.last_on(process)
    unknown = [p for p in preds if not 0 <= p < len(log)]
    if unknown:
        raise OracleError(f"unknown predecessor ids {unknown}")
    preds.discard(prev)
    if len(preds) > 1:
        raise OracleError("at most one cross-process predecessor")
    send = preds.pop() if preds else -1
    i = log.append(process, k, pwc, clpt, pt, send, **extra)
    return log[i]


def _check_ids(log: EventLog, *ids: int) -> None:
    for i in ids:
        if not 0 <= i < len(log):
            raise OracleError(f"unknown event id {i}")


def happened_before(log: EventLog, e: int, f: int) -> bool:
    _check_ids(log, e, f)
    if e == f:
        return False
    vc = log.vector_clocks()
    return bool(np.all(vc[e] <= vc[f]))


def concurrent(log: EventLog, e: int, f: int) -> bool:
    return not happened_before(log, e, f) and not happened_before(log, f, e)


def edge_violations(log: EventLog) -> list[tuple[int, int]]:
    """Generator edges (previous-on-process and send->receive) whose pwc does not increase."""
    if len(log) == 0:
        return []
    pwc = log.col("pwc")
    out = []
    for name in ("pred_local", "pred_remote"):
        pred = log.col(name)
        idx = np.nonzero(pred >= 0)[0]
        bad = idx[pwc[pred[idx]] >= pwc[idx]]
        out.extend((int(pred[f]), int(f)) for f in bad)
    return sorted(out)


def full_pair_violations(log: EventLog) -> list[tuple[int, int]]:
    """Every happened-before pair with a non-increasing pwc, by vector-clock comparison."""
    n = len(log)
    if n == 0:
        return []
    vc = log.vector_clocks()
    proc = log.col("process")
    pwc = log.col("pwc")
    own = vc[np.arange(n), proc]
    out = []
    for f in range(1, n):
        # e -> f  iff  vc_e[p_e] <= vc_f[p_e]
        hb = vc[f, proc[:f]] >= own[:f]
        bad = np.nonzero(hb & (pwc[:f] >= pwc[f]))[0]
        out.extend((int(e), f) for e in bad)
    return out


def verify_causality(log: EventLog, full: Optional[bool] = None) -> list[tuple[int, int]]:
    """Return happened-before pairs whose timestamps are out of order.

    Checking generator edges suffices because the relation is their transitive
    closure and integer order is transitive. Small logs (or ``full=True``) are
    additionally checked pair-by-pair, and the two answers must agree on
    whether any violation exists.
    """
    edges = edge_violations(log)
    if full is None:
        full = len(log) <= FULL_PAIR_LIMIT
    if not full:
        return edges
    pairs = full_pair_violations(log)
    if bool(pairs) != bool(edges):
        raise OracleError("edge check and full-pair check disagree")
    return pairs


def find_overflows(log: EventLog) -> list[tuple[int, int]]:
    """Causal edges whose +1 step carried into hpt ahead of the physical clock.

    Only direct edges can have a pwc difference of exactly one. An edge that
    lands on an aligned value equal to the receiver's clpt is not counted: the
    physical clock reached that value on its own.
    """
    if len(log) == 0:
        return []
    pwc = log.col("pwc")
    clpt = log.col("clpt")
    mask = (1 << log.u) - 1
    out = []
    for name in ("pred_local", "pred_remote"):
        pred = log.col(name)
        idx = np.nonzero(pred >= 0)[0]
        hit = (pwc[pred[idx]] + 1 == pwc[idx]) & ((pwc[idx] & mask) == 0) & (pwc[idx] > clpt[idx])
        out.extend((int(pred[f]), int(f)) for f in idx[hit])
    return sorted(out)


def _causal_step(log: EventLog, f: int) -> Optional[int]:
    """An event one pwc below ``f`` that happened before it; direct predecessors preferred."""
    target = log.pwc[f] - 1
    for p in log.preds(f):
        if log.pwc[p] == target:
            return p
    vc = log.vector_clocks()
    for e in log.ids_with_pwc(target):
        if e < f and np.all(vc[e] <= vc[f]):
            return e
    return None


def find_chain_for(log: EventLog, f: int) -> Optional[Ccc]:
    """Walk back ``lpt(f)`` steps of +1 causal predecessors; None if the walk breaks."""
    _check_ids(log, f)
    v = log.pwc[f] & ((1 << log.u) - 1)
    chain = [f]
    cur = f
    for _ in range(v):
        cur = _causal_step(log, cur)
        if cur is None:
            return None
        chain.append(cur)
    return Ccc(tuple(reversed(chain)))


def longest_mccc(log: EventLog) -> Ccc:
    """Longest consecutive causal chain in the log (dynamic programming in creation order)."""
    n = len(log)
    if n == 0:
        return Ccc(())
    vc = log.vector_clocks()
    best_len = [1] * n
    back = [-1] * n
    for f in range(n):
        for e in log.ids_with_pwc(log.pwc[f] - 1):
            if e < f and best_len[e] + 1 > best_len[f] and np.all(vc[e] <= vc[f]):
                best_len[f] = best_len[e] + 1
                back[f] = e
    end = max(range(n), key=best_len.__getitem__)
    chain = []
    while end >= 0:
        chain.append(end)
        end = back[end]
    return Ccc(tuple(reversed(chain)))


@dataclass(frozen=True)
class BoundViolation:
    check: str  # "lower", "upper" or "spread"
    index: int  # event id, or sample index for "spread"
    value: int
    limit: int


def verify_bounds(log: EventLog, epsilon_ticks: int, u: Optional[int] = None,
                  since: int = 0) -> list[BoundViolation]:
    """Check the per-event envelope and the sampled pairwise spread.

    * lower: ``pwc.e >= clpt.e``
    * upper: ``pwc.e <= max_k clpt.k + 2^u`` using creation-time snapshots
    * spread: ``max_j pwc.j - min_k pwc.k <= eps + 2^(u+1)`` at every sample
    Events before id ``since`` are skipped.
    """
    u = log.u if u is None else u
    out: list[BoundViolation] = []
    if len(log):
        cmax = log.col("clpt_max")
        if np.any(cmax < 0):
            raise OracleError("log lacks per-event clpt snapshots")
        pwc = log.col("pwc")[since:]
        clpt = log.col("clpt")[since:]
        cmax = cmax[since:]
        for i in np.nonzero(pwc < clpt)[0]:
            out.append(BoundViolation("lower", since + int(i), int(pwc[i]), int(clpt[i])))
        ceiling = cmax + (1 << u)
        for i in np.nonzero(pwc > ceiling)[0]:
            out.append(BoundViolation("upper", since + int(i), int(pwc[i]), int(ceiling[i])))
    if log.samples is not None and len(log.samples):
        spread = log.samples.max(axis=1) - log.samples.min(axis=1)
        limit = epsilon_ticks + (1 << (u + 1))
        for i in np.nonzero(spread > limit)[0]:
            out.append(BoundViolation("spread", int(i), int(spread[i]), limit))
    return out


# --- line format ----------------------------------------------------------------
#
# One event per line, tab separated:
#   id  process  kind  preds  pwc  clpt  pt  vclock  [msg]
# preds and vclock are comma separated ("-" when empty or unknown); the optional
# msg field ("sender:seq") lets logs from independent agents be merged.


def format_line(i, process, kind, preds, pwc, clpt, pt, vclock=None, msg=None) -> str:
    fields = [str(i), str(process), kind, ",".join(map(str, preds)) or "-", str(pwc), str(clpt), str(pt),
              ",".join(map(str, vclock)) if vclock is not None else "-"]
    if msg is not None:
        fields.append(msg)
    return "\t".join(fields) + "\n"


def export_log(log: EventLog, out: io.TextIOBase, with_vclock: bool = True) -> None:
    vc = log.vector_clocks() if with_vclock else None
    for i in range(len(log)):
        out.write(format_line(i, log.process[i], KINDS[log.kind[i]], log.preds(i), log.pwc[i], log.clpt[i],
                              log.pt[i], vc[i].tolist() if vc is not None else None))


def parse_line(line: str) -> dict:
    parts = line.rstrip("\n").split("\t")
    if len(parts) not in (8, 9):
        raise OracleError(f"malformed event line: {line!r}")
    return {
        "id": parts[0],
        "process": int(parts[1]),
        "kind": parts[2],
        "preds": [] if parts[3] == "-" else parts[3].split(","),
        "pwc": int(parts[4]),
        "clpt": int(parts[5]),
        "pt": int(parts[6]),
        "vclock": None if parts[7] == "-" else [int(x) for x in parts[7].split(",")],
        "msg": parts[8] if len(parts) == 9 else None,
    }


def import_log(lines: Iterable[str], n_processes: int, u: int) -> EventLog:
    """Rebuild a log written by :func:`export_log`; stored vector clocks are checked, not trusted."""
    log = EventLog(n_processes, u)
    stored = []
    for line in lines:
        if not line.strip():
            continue
        rec = parse_line(line)
        if int(rec["id"]) != len(log):
            raise OracleError("event ids must be dense and in creation order")
        record_event(log, rec["process"], rec["kind"], [int(p) for p in rec["preds"]], rec["pwc"],
                     rec["clpt"], rec["pt"])
        stored.append(rec["vclock"])
    vc = log.vector_clocks()
    for i, s in enumerate(stored):
        if s is not None and list(vc[i]) != s:
            raise OracleError(f"stored vector clock of event {i} is inconsistent with its predecessors")
    return log


def _load_agent_stream(lines: Iterable[str]):
    cols = [array("q") for _ in range(7)]  # process kind pwc clpt pt sender seq
    for line in lines:
        if not line.strip():
            continue
        parts = line.rstrip("\n").split("\t")
        if len(parts) != 9:
            raise OracleError(f"agent log line lacks a msg field: {line!r}")
        kind = KINDS.index(parts[2])
        if kind == LOCAL:
            sender, seq = -1, -1
        else:
            a, b = parts[8].split(":")
            sender, seq = int(a), int(b)
        for col, v in zip(cols, (int(parts[1]), kind, int(parts[4]), int(parts[5]), int(parts[6]), sender, seq)):
            col.append(v)
    return cols


def merge_agent_logs(streams: Sequence[Iterable[str]], agent_ids: Sequence[int], u: int) -> EventLog:
    """Merge per-agent logs into one causally ordered log.

    Each agent writes its own events in local order with a ``msg`` field naming
    ``sender:seq``; an agent numbers its sends 0, 1, 2, ... A receive is
    admitted once the matching send has been merged. Receives whose send is
    absent from the sender's log are dropped and counted in ``log.unmatched``.
    """
    index = {a: k for k, a in enumerate(agent_ids)}
    data = [_load_agent_stream(s) for s in streams]
    # per sender: merged event id of each send, by seq (-1 until merged)
    send_ids: dict[int, array] = {}
    for cols in data:
        for sender, seq, kind in zip(cols[5], cols[6], cols[1]):
            if kind == SEND:
                ids = send_ids.setdefault(sender, array("q"))
                if seq != len(ids):
                    raise OracleError(f"agent {sender} sends are not numbered densely from 0")
                ids.append(-1)
    heads = [0] * len(data)
    log = EventLog(len(agent_ids), u)
    log.unmatched = 0
    remaining = sum(len(c[0]) for c in data)
    while remaining:
        progressed = False
        for k, cols in enumerate(data):
            proc_c, kind_c, pwc_c, clpt_c, pt_c, snd_c, seq_c = cols
            h = heads[k]
            while h < len(proc_c):
                kind = kind_c[h]
                proc = index[proc_c[h]]
                if kind == RECEIVE:
                    ids = send_ids.get(snd_c[h])
                    seq = seq_c[h]
                    if ids is None or seq >= len(ids):
                        log.unmatched += 1
                        h += 1
                        continue
                    if ids[seq] < 0:
                        break
                    log.append(proc, RECEIVE, pwc_c[h], clpt_c[h], pt_c[h], ids[seq])
                else:
                    i = log.append(proc, kind, pwc_c[h], clpt_c[h], pt_c[h])
                    if kind == SEND:
                        send_ids[snd_c[h]][seq_c[h]] = i
                h += 1
            remaining -= h - heads[k]
            progressed = progressed or h > heads[k]
            heads[k] = h
        if not progressed:
            raise OracleError("agent logs contain a causal cycle")
    return log
