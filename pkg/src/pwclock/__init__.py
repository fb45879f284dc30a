"""PWC: physical-clock timestamps that also respect one-way causality."""

from .clock import (
    ClockError, ClockParams, Delayed, Discarded, EventKind, ManualClockSource, OverflowPolicy, PolicyMode,
    PwcClock, SystemClockSource, Timestamped, from_bytes, join, mask_clpt, split, to_bytes,
)

__version__ = "0.1.0"
