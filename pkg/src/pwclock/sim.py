"""Deterministic discrete-event simulator of N processes stamping with PWC.

Time is counted in integer ticks of 1 us. Each process owns a physical clock
``pt = t + floor(offset(t))`` whose offset takes a bounded random walk, so any
two clocks stay within ``epsilon`` of each other. The event loop itself lives
in :mod:`pwclock._kernel`; this module validates parameters, builds the skew
and fault tables, and turns the kernel's columns into an :class:`EventLog` and
a :class:`SimResult`.
"""

from __future__ import annotations

import csv
import enum
import io
import json
from dataclasses import dataclass, field, fields, replace
from typing import Optional, Sequence

import numpy as np

from . import _kernel
from .clock import OverflowPolicy, PolicyMode, mask_bits
from .oracle import EventLog, export_log, verify_bounds, verify_causality

TICKS_PER_SECOND = 1_000_000
KNOT = 1000  # ticks between skew-walk knots
HIST_CSV_BITS = 16


class SimError(ValueError):
    pass


class Topology(enum.Enum):
    RANDOM = "random"
    TIME_LEADER = "time_leader"
    HUB_SPOKE = "hub_spoke"


_TOPO_CODE = {Topology.RANDOM: 0, Topology.TIME_LEADER: 1, Topology.HUB_SPOKE: 2}
_POLICY_CODE = {PolicyMode.UNGUARDED: 0, PolicyMode.WAIT: 1, PolicyMode.DISCARD: 2}


class FaultKind(enum.Enum):
    CLOCK_JUMP_FORWARD = "clock_jump_forward"  # value: ticks added to pt
    NEGATIVE_LEAP = "negative_leap"  # value: ticks removed from pt
    SKEW_VIOLATION = "skew_violation"  # value: ticks beyond the epsilon band
    PWC_CORRUPTION = "pwc_corruption"  # value: new pwc


@dataclass(frozen=True)
class FaultSpec:
    at: int
    process: int
    kind: FaultKind
    value: int

    def __post_init__(self):
        if isinstance(self.kind, str):
            object.__setattr__(self, "kind", FaultKind(self.kind))
        if self.at < 0:
            raise SimError("fault time must be >= 0")
        if self.value < 0:
            raise SimError("fault value must be >= 0")

    @classmethod
    def clock_jump_forward(cls, at, process, ticks):
        return cls(at, process, FaultKind.CLOCK_JUMP_FORWARD, ticks)

    @classmethod
    def negative_leap(cls, at, process, ticks):
        return cls(at, process, FaultKind.NEGATIVE_LEAP, ticks)

    @classmethod
    def skew_violation(cls, at, process, extra_ticks):
        return cls(at, process, FaultKind.SKEW_VIOLATION, extra_ticks)

    @classmethod
    def pwc_corruption(cls, at, process, new_value):
        return cls(at, process, FaultKind.PWC_CORRUPTION, new_value)

    def to_dict(self) -> dict:
        return {"at": self.at, "process": self.process, "kind": self.kind.value, "value": self.value}


@dataclass(frozen=True)
class SimParams:
    n_processes: int = 8
    topology: Topology = Topology.RANDOM
    epsilon: int = 6250
    delta_se: int = 1
    delta_re: int = 1
    delta_loc: int = 1
    latency_min: int = 1000
    latency_max: int = 20000
    send_rate: float = 64000.0  # messages per node per second
    duration: float = 1.0  # simulated seconds
    u: int = 8
    policy: OverflowPolicy = field(default_factory=OverflowPolicy)
    seed: int = 0
    skew_walk_step: float = 0.01  # max offset drift, ticks per tick
    faults: tuple[FaultSpec, ...] = ()
    local_rate: float = 0.0  # local events per node per second
    sanity_reset: bool = True
    reset_epsilon: Optional[int] = None  # defaults to effective_epsilon + 2^u, see reset_slack
    process_u: Optional[tuple[int, ...]] = None  # per-process override of u
    suspend_windows: tuple[tuple[int, int], ...] = ()
    sample_period: int = 1000
    record: bool = True

    def __post_init__(self):
        if isinstance(self.topology, str):
            object.__setattr__(self, "topology", Topology(self.topology))
        if isinstance(self.policy, (str, dict)):
            pol = OverflowPolicy(self.policy) if isinstance(self.policy, str) else OverflowPolicy(**self.policy)
            object.__setattr__(self, "policy", pol)
        object.__setattr__(self, "faults", tuple(
            f if isinstance(f, FaultSpec) else FaultSpec(**f) for f in self.faults))
        object.__setattr__(self, "suspend_windows", tuple(tuple(w) for w in self.suspend_windows))
        if self.process_u is not None:
            object.__setattr__(self, "process_u", tuple(self.process_u))
        self.validate()

    def validate(self) -> None:
        if self.n_processes < 2:
            raise SimError("need at least 2 processes")
        if self.epsilon < 0:
            raise SimError("epsilon must be >= 0")
        for name in ("delta_se", "delta_re", "delta_loc", "latency_min", "sample_period"):
            if getattr(self, name) < 1:
                raise SimError(f"{name} must be >= 1 tick")
        if self.latency_max < self.latency_min:
            raise SimError("latency_max < latency_min")
        if self.send_rate < 0 or self.local_rate < 0:
            raise SimError("rates must be >= 0")
        if self.duration <= 0:
            raise SimError("duration must be > 0")
        if not 0 < self.u < 63:
            raise SimError("u must be in [1, 62]")
        if self.process_u is not None:
            if len(self.process_u) != self.n_processes or not all(0 < x < 63 for x in self.process_u):
                raise SimError("process_u needs one u in [1, 62] per process")
        if not 0 <= self.seed < 1 << 64:
            raise SimError("seed must be a 64-bit unsigned integer")
        if not 0 <= self.skew_walk_step < 1:
            raise SimError("skew_walk_step must be in [0, 1) so clocks never run backwards")
        for f in self.faults:
            if not 0 <= f.process < self.n_processes:
                raise SimError(f"fault process {f.process} out of range")
            if f.at > self.duration_ticks:
                raise SimError("fault time beyond the run")
        for a, b in self.suspend_windows:
            if not 0 <= a <= b:
                raise SimError("suspend window must satisfy 0 <= start <= end")
        if self.reset_epsilon is not None and self.reset_epsilon < 0:
            raise SimError("reset_epsilon must be >= 0")

    @property
    def duration_ticks(self) -> int:
        return int(round(self.duration * TICKS_PER_SECOND))

    @property
    def u_per_process(self) -> tuple[int, ...]:
        return self.process_u if self.process_u is not None else (self.u,) * self.n_processes

    @property
    def clock_fault_slack(self) -> int:
        """Extra skew introduced by clock faults, on top of epsilon."""
        slack = 0
        skew = None
        for f in self.faults:
            if f.kind in (FaultKind.CLOCK_JUMP_FORWARD, FaultKind.NEGATIVE_LEAP):
                slack += f.value
            elif f.kind is FaultKind.SKEW_VIOLATION:
                skew = skew or SkewModel.build(self)
                slack += abs(_skew_violation_step(self, skew, f))
        return slack

    @property
    def effective_epsilon(self) -> int:
        return self.epsilon + self.clock_fault_slack

    @property
    def reset_slack(self) -> int:
        """Epsilon handed to the sanity check.

        Masking can make two clpt values look up to 2^u - 1 further apart than
        the raw clocks, so the default adds one 2^u quantum on top of the
        effective skew; a healthy run then never trips the check.
        """
        if self.reset_epsilon is not None:
            return self.reset_epsilon
        return self.effective_epsilon + (1 << max(self.u_per_process))

    def to_dict(self) -> dict:
        d = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "topology":
                v = v.value
            elif f.name == "policy":
                v = {"mode": v.mode.value, "discard_threshold": v.discard_threshold}
            elif f.name == "faults":
                v = [x.to_dict() for x in v]
            elif f.name == "suspend_windows":
                v = [list(w) for w in v]
            elif f.name == "process_u" and v is not None:
                v = list(v)
            d[f.name] = v
        return d


@dataclass
class SimResult:
    total_events: int
    bits_histogram: list[int]
    delayed: int
    discarded: int
    max_bits: int
    causality_violations: int
    bound_violations: int
    resets: int
    overflows: int = 0
    max_spread: int = 0
    samples: int = 0
    verified: str = "edges"  # "full", "edges" or "kernel" (unrecorded runs)

    @property
    def violations(self) -> int:
        return self.causality_violations + self.bound_violations


# --- skew model ---------------------------------------------------------------------


@dataclass
class SkewModel:
    """Per-process clock offsets at knots every ``KNOT`` ticks, linearly interpolated.

    The walk moves at most ``skew_walk_step`` ticks per tick and is clamped to
    ``[lo_j, hi_j]``; all bands lie inside ``[0, epsilon]``, so any two clocks
    differ by at most ``epsilon``.
    """

    offsets: np.ndarray  # (n_processes, n_knots) float64
    lo: np.ndarray
    hi: np.ndarray

    @classmethod
    def build(cls, p: SimParams) -> "SkewModel":
        n, eps = p.n_processes, float(p.epsilon)
        n_knots = p.duration_ticks // KNOT + 2
        rng = np.random.default_rng([p.seed, 1])
        lo = np.zeros(n)
        hi = np.full(n, eps)
        if p.topology is Topology.TIME_LEADER:
            lead = eps * (1 - 1e-3)
            lo[0] = hi[0] = lead
            hi[1:] = lead
        start = rng.uniform(lo, hi)
        off = np.empty((n, n_knots))
        off[:, 0] = start
        if p.skew_walk_step > 0:
            steps = rng.uniform(-1.0, 1.0, size=(n, n_knots - 1)) * (p.skew_walk_step * KNOT)
            cur = start.copy()
            for k in range(1, n_knots):
                cur = np.clip(cur + steps[:, k - 1], lo, hi)
                off[:, k] = cur
        else:
            off[:] = start[:, None]
        return cls(off, lo, hi)

    def offset(self, j: int, t: int) -> float:
        k = min(t // KNOT, self.offsets.shape[1] - 2)
        a, b = self.offsets[j, k], self.offsets[j, k + 1]
        return a + (b - a) * ((t - k * KNOT) / KNOT)


def _fault_tables(p: SimParams, skew: SkewModel):
    clock_faults = []
    corruptions = []
    for f in sorted(p.faults, key=lambda f: (f.at, f.process)):
        if f.kind is FaultKind.CLOCK_JUMP_FORWARD:
            clock_faults.append((f.at, f.process, f.value))
        elif f.kind is FaultKind.NEGATIVE_LEAP:
            clock_faults.append((f.at, f.process, -f.value))
        elif f.kind is FaultKind.SKEW_VIOLATION:
            clock_faults.append((f.at, f.process, _skew_violation_step(p, skew, f)))
        else:
            corruptions.append((f.at, f.process, f.value))

    def cols(rows):
        a = np.array(rows, dtype=np.int64).reshape(-1, 3)
        return a[:, 0].copy(), a[:, 1].copy(), a[:, 2].copy()

    return cols(clock_faults), cols(corruptions)


def _skew_violation_step(p: SimParams, skew: SkewModel, f: FaultSpec) -> int:
    # move the clock to epsilon + extra ahead of true time
    return int(p.epsilon + f.value - np.floor(skew.offset(f.process, f.at)))


def physical_clock(p: SimParams, process: int, t: int, skew: Optional[SkewModel] = None) -> int:
    """Raw reading of ``process``'s clock at global tick ``t`` (faults included)."""
    skew = skew or SkewModel.build(p)
    (f_at, f_proc, f_val), _ = _fault_tables(p, skew)
    return int(_kernel.physical_time(skew.offsets, process, t, KNOT, f_at, f_proc, f_val))


def advance_clock(p: SimParams, process: int, global_time: int) -> int:
    return physical_clock(p, process, global_time)


def reset_ceiling(p: SimParams, process: int, t: int) -> int:
    """Largest pwc the sanity check tolerates on ``process`` at tick ``t``."""
    u = p.u_per_process[process]
    return mask_bits(physical_clock(p, process, t), u) + p.reset_slack + (1 << u)


def pick_destination(topology: Topology, sender: int, n: int, rng: np.random.Generator) -> int:
    if n < 2:
        raise SimError("need at least 2 processes")
    topology = Topology(topology)
    if topology is Topology.HUB_SPOKE:
        return int(rng.integers(1, n)) if sender == 0 else 0
    d = int(rng.integers(0, n - 1))
    return d + 1 if d >= sender else d


def inject_fault(p: SimParams, fault: FaultSpec) -> SimParams:
    """Return ``p`` with one more fault scheduled."""
    return replace(p, faults=p.faults + (fault,))


def suspend_window(p: SimParams, t: int) -> SimParams:
    """Return ``p`` with no stamping allowed during ``[t, t + 2 * epsilon]``."""
    return replace(p, suspend_windows=p.suspend_windows + ((t, t + 2 * p.epsilon),))


# --- running ---------------------------------------------------------------------------


def kernel_seed(seed: int) -> int:
    return int(np.random.SeedSequence(seed).generate_state(1)[0])


def expected_events(p: SimParams) -> float:
    return p.n_processes * (2 * p.send_rate + p.local_rate) * p.duration


def _call_kernel(p: SimParams, skew: SkewModel, cap: int, stop_on_overflow: bool = False):
    (f_at, f_proc, f_val), (c_at, c_proc, c_val) = _fault_tables(p, skew)
    w = np.array(p.suspend_windows, dtype=np.int64).reshape(-1, 2)
    send_mean = TICKS_PER_SECOND / p.send_rate if p.send_rate > 0 else 0.0
    local_mean = TICKS_PER_SECOND / p.local_rate if p.local_rate > 0 else 0.0
    return _kernel.simulate(
        p.n_processes, _TOPO_CODE[p.topology], p.duration_ticks, np.array(p.u_per_process, dtype=np.int64),
        p.delta_se, p.delta_re, p.delta_loc, p.latency_min, p.latency_max, send_mean, local_mean,
        _POLICY_CODE[p.policy.mode], p.policy.discard_threshold, kernel_seed(p.seed),
        skew.offsets, KNOT, f_at, f_proc, f_val, c_at, c_proc, c_val,
        w[:, 0].copy(), w[:, 1].copy(), p.sanity_reset, p.reset_slack, p.sample_period, p.record, cap, stop_on_overflow)


def run(p: SimParams, verify: bool = True, stop_on_overflow: bool = False) -> tuple[SimResult, Optional[EventLog]]:
    """Simulate ``p``; returns the result and, when ``p.record``, the full event log.

    ``stop_on_overflow`` ends the run at the first stamp that would carry into
    hpt, which is all a wait-free search needs to know.
    """
    skew = SkewModel.build(p)
    cap = int(expected_events(p) * 1.25) + 10_000
    while True:
        out = _call_kernel(p, skew, cap, stop_on_overflow)
        counters = out[0]
        if not counters[_kernel.C_TRUNCATED]:
            break
        cap *= 2
    hist, samples = out[1], out[2]
    u_max = max(p.u_per_process)
    spread = samples.max(axis=1) - samples.min(axis=1) if len(samples) else np.zeros(0, dtype=np.int64)
    max_spread = int(spread.max()) if len(spread) else 0
    nz = np.nonzero(hist)[0]
    result = SimResult(
        total_events=int(counters[_kernel.C_EVENTS]),
        bits_histogram=[int(x) for x in hist[:64]],
        delayed=int(counters[_kernel.C_DELAYED]),
        discarded=int(counters[_kernel.C_DISCARDED]),
        max_bits=int(nz.max()) if len(nz) else 0,
        causality_violations=int(counters[_kernel.C_EDGE_VIOL]),
        bound_violations=0,
        resets=int(counters[_kernel.C_RESETS]),
        overflows=int(counters[_kernel.C_OVERFLOWS]),
        max_spread=max_spread,
        samples=int(counters[_kernel.C_SAMPLES]),
        verified="kernel",
    )
    eps = p.effective_epsilon
    if not p.record:
        result.bound_violations = int(np.count_nonzero(spread > eps + (1 << (u_max + 1))))
        return result, None
    log = EventLog.from_arrays(
        p.n_processes, u_max, process=out[3], kind=out[4], pred_local=out[5], pred_remote=out[6], pwc=out[7],
        clpt=out[8], pt=out[9], time=out[10], clpt_max=out[11], reset=out[12], samples=samples,
        sample_times=np.arange(len(samples), dtype=np.int64) * p.sample_period)
    if verify:
        viol = verify_causality(log)
        result.causality_violations = len(viol)
        result.verified = "full" if len(log) <= 10_000 else "edges"
        result.bound_violations = len(verify_bounds(log, eps, u_max))
    return result, log


def waitfree_search(p: SimParams, u_max: int = 40) -> tuple[int, SimResult]:
    """Smallest u for which ``p`` runs unguarded without a single overflow.

    Candidates are tried upward from 1 and each failing run stops at its first
    overflow. Returns the u and the (complete) result of the run at that u.
    """
    base = replace(p, policy=OverflowPolicy.unguarded(), process_u=None, record=False)
    for u in range(1, u_max + 1):
        q = replace(base, u=u)
        r, _ = run(q, stop_on_overflow=True)
        if r.overflows == 0:
            return u, r
    raise SimError(f"no u <= {u_max} is wait-free for this workload")


# --- output -------------------------------------------------------------------------------

PARAM_COLUMNS = [f.name for f in fields(SimParams)]
RESULT_COLUMNS = (["total_events", "delayed", "discarded", "max_bits"]
                  + [f"bits_{i}" for i in range(HIST_CSV_BITS)]
                  + ["violations", "causality_violations", "bound_violations", "resets", "overflows", "max_spread"])
CSV_COLUMNS = PARAM_COLUMNS + RESULT_COLUMNS


def csv_row(p: SimParams, r: SimResult) -> dict:
    row = {}
    for k, v in p.to_dict().items():
        row[k] = json.dumps(v, sort_keys=True) if isinstance(v, (dict, list)) else v
    row.update(total_events=r.total_events, delayed=r.delayed, discarded=r.discarded, max_bits=r.max_bits)
    for i in range(HIST_CSV_BITS):
        row[f"bits_{i}"] = r.bits_histogram[i]
    row.update(violations=r.violations, causality_violations=r.causality_violations,
               bound_violations=r.bound_violations, resets=r.resets, overflows=r.overflows,
               max_spread=r.max_spread)
    return row


def write_csv(rows: Sequence[dict], out: io.TextIOBase) -> None:
    w = csv.DictWriter(out, fieldnames=CSV_COLUMNS, lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow(row)


def csv_text(p: SimParams, r: SimResult) -> str:
    buf = io.StringIO()
    write_csv([csv_row(p, r)], buf)
    return buf.getvalue()


def log_text(log: EventLog, with_vclock: bool = False) -> str:
    buf = io.StringIO()
    export_log(log, buf, with_vclock=with_vclock)
    return buf.getvalue()


def params_from_dict(d: dict) -> SimParams:
    known = set(PARAM_COLUMNS)
    unknown = set(d) - known
    if unknown:
        raise SimError(f"unknown simulator parameters: {sorted(unknown)}")
    return SimParams(**d)


__all__ = [
    "FaultKind", "FaultSpec", "SimError", "SimParams", "SimResult", "SkewModel", "Topology",
    "advance_clock", "csv_row", "csv_text", "inject_fault", "log_text", "params_from_dict", "physical_clock",
    "pick_destination", "reset_ceiling", "run", "suspend_window", "write_csv",
]
