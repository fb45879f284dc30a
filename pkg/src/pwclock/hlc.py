"""Reference hybrid logical clock with the 48/12/4-bit packed layout.

Kept here to demonstrate why a packed HLC value cannot be compared as a plain
integer, whereas a PWC value can.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass

DIFF_BITS = 12
COUNT_BITS = 4
LOW_BITS = DIFF_BITS + COUNT_BITS


class HlcEncodingError(ValueError):
    """l - pt or c does not fit its packed field."""


@dataclass(frozen=True, order=True)
class HlcState:
    l: int
    c: int = 0


def hlc_send_or_local(state: HlcState, pt: int) -> HlcState:
    l = max(state.l, pt)
    return HlcState(l, state.c + 1 if l == state.l else 0)


def hlc_receive(state: HlcState, msg: HlcState, pt: int) -> HlcState:
    l = max(state.l, msg.l, pt)
    if l == state.l == msg.l:
        c = max(state.c, msg.c) + 1
    elif l == state.l:
        c = state.c + 1
    elif l == msg.l:
        c = msg.c + 1
    else:
        c = 0
    return HlcState(l, c)


def hlc_encode(pt: int, state: HlcState) -> int:
    """Pack as ``pt`` high 48 bits | (l - pt) 12 bits | c 4 bits.

    ``pt`` is the physical reading taken with the event; only its low 48 bits
    survive in the high field.
    """
    diff = state.l - pt
    if not 0 <= diff < (1 << DIFF_BITS):
        raise HlcEncodingError(f"l - pt = {diff} does not fit in {DIFF_BITS} bits")
    if not 0 <= state.c < (1 << COUNT_BITS):
        raise HlcEncodingError(f"c = {state.c} does not fit in {COUNT_BITS} bits")
    high = pt & ((1 << 48) - 1)
    return (high << LOW_BITS) | (diff << COUNT_BITS) | state.c


def hlc_decode(enc: int) -> HlcState:
    high = enc >> LOW_BITS
    diff = (enc >> COUNT_BITS) & ((1 << DIFF_BITS) - 1)
    return HlcState(high + diff, enc & ((1 << COUNT_BITS) - 1))


def hlc_compare(a: int, b: int) -> int:
    """Order two packed timestamps by decoded ``(l, c)``; returns -1, 0 or 1."""
    da, db = hlc_decode(a), hlc_decode(b)
    return (da > db) - (da < db)


class HlcClock:
    def __init__(self, source, state: HlcState | None = None):
        self.source = source
        self.state = state or HlcState(source.now(), 0)
        self.lock = threading.Lock()

    def tick(self) -> HlcState:
        with self.lock:
            self.state = hlc_send_or_local(self.state, self.source.now())
            return self.state

    def receive(self, msg: HlcState) -> HlcState:
        with self.lock:
            self.state = hlc_receive(self.state, msg, self.source.now())
            return self.state
