"""Physical clock with causality: 64-bit timestamps whose low ``u`` bits count causal steps.

The arithmetic helpers at the top of this module are plain functions over
integers so the simulator kernel can compile the very same source with numba.
"""

from __future__ import annotations

import enum
import threading
import time
from dataclasses import dataclass
from typing import Optional, Union

MAX_TS = (1 << 64) - 1


# --- stamping arithmetic (shared with the jitted simulator kernel) ---------


def mask_bits(pt, u):
    return (pt >> u) << u


def next_local(pwc, clpt):
    n = pwc + 1
    if clpt > n:
        return clpt
    return n


def next_receive(pwc, msg, clpt):
    n = pwc + 1
    if msg + 1 > n:
        n = msg + 1
    if clpt > n:
        return clpt
    return n


def overflow_wait(cand, clpt, u):
    """Ticks to wait before stamping past ``cand`` without carrying into hpt; 0 if none."""
    nxt = cand + 1
    if (nxt & ((1 << u) - 1)) == 0 and cand >= clpt:
        return nxt - clpt
    return 0


def bits_needed(lpt):
    n = 0
    while lpt > 0:
        n += 1
        lpt >>= 1
    return n


# --- checked public API -------------------------------------------------------


class ClockError(ValueError):
    pass


def _check_u(u: int) -> None:
    if not 0 < u < 64:
        raise ClockError(f"u must satisfy 0 < u < 64, got {u}")


def mask_clpt(raw_pt: int, u: int) -> int:
    """Zero the ``u`` extraneous low bits of a raw physical-clock reading."""
    _check_u(u)
    return mask_bits(raw_pt, u)


def split(ts: int, u: int) -> tuple[int, int]:
    """Return ``(hpt, lpt)`` with ``ts == hpt << u | lpt``."""
    _check_u(u)
    return ts >> u, ts & ((1 << u) - 1)


def join(hpt: int, lpt: int, u: int) -> int:
    _check_u(u)
    if not 0 <= lpt < (1 << u):
        raise ClockError(f"lpt {lpt} does not fit in {u} bits")
    return (hpt << u) | lpt


def lpt_of(ts: int, u: int) -> int:
    return ts & ((1 << u) - 1)


def to_bytes(ts: int) -> bytes:
    return ts.to_bytes(8, "big")


def from_bytes(buf: bytes) -> int:
    if len(buf) != 8:
        raise ClockError("timestamp must be exactly 8 bytes")
    return int.from_bytes(buf, "big")


@dataclass(frozen=True)
class ClockParams:
    u: int = 8
    tick_unit: float = 1e-6  # seconds per raw tick

    def __post_init__(self):
        _check_u(self.u)


class PolicyMode(enum.Enum):
    UNGUARDED = "unguarded"
    WAIT = "wait"
    DISCARD = "discard"


@dataclass(frozen=True)
class OverflowPolicy:
    mode: PolicyMode = PolicyMode.UNGUARDED
    discard_threshold: int = 0  # ticks; waits longer than this are discarded

    def __post_init__(self):
        if isinstance(self.mode, str):
            object.__setattr__(self, "mode", PolicyMode(self.mode))
        if self.mode is PolicyMode.DISCARD and self.discard_threshold <= 0:
            raise ClockError("discard_threshold must be > 0 in discard mode")

    @classmethod
    def unguarded(cls) -> "OverflowPolicy":
        return cls(PolicyMode.UNGUARDED)

    @classmethod
    def wait(cls) -> "OverflowPolicy":
        return cls(PolicyMode.WAIT)

    @classmethod
    def discard(cls, threshold: int) -> "OverflowPolicy":
        return cls(PolicyMode.DISCARD, threshold)


class EventKind(enum.Enum):
    LOCAL = "L"
    SEND = "S"
    RECEIVE = "R"


@dataclass(frozen=True)
class Timestamped:
    ts: int


@dataclass(frozen=True)
class Delayed:
    wait_ticks: int
    ts: int

    def __post_init__(self):
        if self.wait_ticks <= 0:
            raise ClockError("Delayed requires wait_ticks > 0")


@dataclass(frozen=True)
class Discarded:
    wait_ticks: int = 0


StampOutcome = Union[Timestamped, Delayed, Discarded]


# --- physical clock sources -----------------------------------------------------


class PhysicalClockSource:
    """Supplies raw tick counts. Subclasses override ``now`` and ``sleep_ticks``."""

    monotonic = True

    def now(self) -> int:
        raise NotImplementedError

    def sleep_ticks(self, ticks: int) -> None:
        raise NotImplementedError


class ManualClockSource(PhysicalClockSource):
    """A clock that only moves when told to. Used by tests and replays."""

    def __init__(self, start: int = 0, monotonic: bool = True):
        self._now = start
        self.monotonic = monotonic

    def now(self) -> int:
        return self._now

    def set(self, value: int) -> None:
        if self.monotonic and value < self._now:
            raise ClockError("monotonic source cannot move backwards")
        self._now = value

    def advance(self, ticks: int) -> None:
        self.set(self._now + ticks)

    def sleep_ticks(self, ticks: int) -> None:
        self._now += max(ticks, 0)


class SystemClockSource(PhysicalClockSource):
    """Host clock scaled to microsecond ticks.

    ``kind="realtime"`` reads the wall clock that NTP disciplines (needed when
    comparing across hosts); ``kind="monotonic"`` never steps backwards but is
    only comparable within one host.
    """

    def __init__(self, kind: str = "realtime"):
        if kind == "realtime":
            self._read = time.time_ns
            self.monotonic = False
        elif kind == "monotonic":
            self._read = time.monotonic_ns
            self.monotonic = True
        else:
            raise ClockError(f"unknown clock kind {kind!r}")
        self.kind = kind

    def now(self) -> int:
        return self._read() // 1000

    def sleep_ticks(self, ticks: int) -> None:
        if ticks > 0:
            time.sleep(ticks * 1e-6)


# --- the clock ---------------------------------------------------------------------


class PwcClock:
    """Per-process PWC state.

    Every stamping operation is an atomic read-modify-write of ``pwc`` and the
    physical clock, serialised by an internal lock, so one clock may be shared
    by a send loop and a receive loop.
    """

    def __init__(self, params: ClockParams | int, source: PhysicalClockSource, pwc: Optional[int] = None):
        if isinstance(params, int):
            params = ClockParams(u=params)
        self.params = params
        self.source = source
        self._u = params.u
        self._pending: Optional[tuple[int, int]] = None  # (new_u, switch_at)
        self.lock = threading.RLock()
        self.pwc = mask_bits(source.now(), self._u) if pwc is None else pwc
        # a fresh clock has issued nothing, so its first event is stamped clpt rather than clpt + 1
        self._issued = pwc is not None
        self.resets = 0

    @property
    def u(self) -> int:
        return self._u

    def clpt(self, u: Optional[int] = None) -> int:
        return mask_bits(self.source.now(), self._u if u is None else u)

    # internal: pick the u for a stamp, honouring a scheduled switch
    def _stamp_u(self, rule, *args) -> tuple[int, int]:
        pt = self.source.now()
        value = rule(*args, mask_bits(pt, self._u))
        if self._pending is not None:
            new_u, switch_at = self._pending
            if value >= switch_at:
                self._u = new_u
                self._pending = None
                value = rule(*args, mask_bits(pt, new_u))
        return value, pt

    def _commit(self, value: int) -> int:
        if value > MAX_TS:
            raise OverflowError("64-bit PWC exhausted")
        self.pwc = value
        self._issued = True
        return value

    def _prev(self) -> int:
        return self.pwc if self._issued else self.pwc - 1

    def on_local(self) -> int:
        with self.lock:
            value, _ = self._stamp_u(next_local, self._prev())
            return self._commit(value)

    def on_send(self) -> int:
        """Stamp a send event; the returned value is the message timestamp."""
        return self.on_local()

    def on_receive(self, msg_ts: int) -> int:
        with self.lock:
            if not 0 <= msg_ts <= MAX_TS:
                raise ClockError("message timestamp outside 64-bit range")
            value, _ = self._stamp_u(next_receive, self._prev(), msg_ts)
            return self._commit(value)

    def would_overflow(self, incoming: Optional[int] = None) -> tuple[bool, int]:
        with self.lock:
            prev = self._prev()
            cand = prev if incoming is None else max(prev, incoming)
            wait = overflow_wait(cand, self.clpt(), self._u)
            return wait > 0, wait

    def stamp(self, kind: EventKind, incoming: Optional[int] = None) -> int:
        if kind is EventKind.RECEIVE:
            return self.on_receive(incoming)
        return self.on_local()

    def guarded_stamp(
        self,
        kind: EventKind,
        incoming: Optional[int] = None,
        policy: OverflowPolicy = OverflowPolicy(),
    ) -> StampOutcome:
        """Stamp an event unless doing so would carry the logical count into hpt.

        With a wait-style policy the call sleeps on the clock source until the
        physical clock catches up, then stamps; the returned ``Delayed`` holds
        the total wait. Discard mode drops the event when the wait exceeds the
        threshold and leaves the clock untouched.
        """
        if (kind is EventKind.RECEIVE) != (incoming is not None):
            raise ClockError("incoming timestamp is required for, and only for, receives")
        with self.lock:
            if policy.mode is PolicyMode.UNGUARDED:
                return Timestamped(self.stamp(kind, incoming))
            waited = 0
            while True:
                overflow, wait = self.would_overflow(incoming)
                if not overflow:
                    break
                if policy.mode is PolicyMode.DISCARD and waited + wait > policy.discard_threshold:
                    return Discarded(waited + wait)
                self.source.sleep_ticks(wait)
                waited += wait
            ts = self.stamp(kind, incoming)
            return Delayed(waited, ts) if waited else Timestamped(ts)

    def sanity_reset(self, epsilon_ticks: int) -> bool:
        """Pull ``pwc`` back to the physical clock if it left ``[clpt, clpt + eps + 2^u]``."""
        if epsilon_ticks < 0:
            raise ClockError("epsilon must be non-negative")
        with self.lock:
            clpt = self.clpt()
            if clpt <= self.pwc <= clpt + epsilon_ticks + (1 << self._u):
                return False
            self.pwc = clpt
            self.resets += 1
            return True

    def schedule_u_change(self, new_u: int, switch_at: int) -> None:
        _check_u(new_u)
        with self.lock:
            if switch_at <= self.pwc:
                raise ClockError("switch_at must lie in the future of this clock")
            if new_u == self._u:
                self._pending = None
                return
            self._pending = (new_u, switch_at)
