"""Accounting of live field-payload storage.

Tracks the number of scalar values held by field containers (scalar fields,
staggered vector fields and the stacked spacetime buffers built on top of
them).  Solver scratch arrays (e.g. the batched cell systems inside the
smoother) are intentionally not counted: the bound being checked is on field
payload.  Tracking is off by default; enable it around a solve with
:func:`track_payload`.
"""

from contextlib import contextmanager
import weakref

_active = False
_current = 0
_peak = 0


def register(arr):
    """Register a payload array; deregistration happens on garbage collection."""
    global _current, _peak
    if not _active:
        return
    n = int(arr.size)
    _current += n
    if _current > _peak:
        _peak = _current
    weakref.finalize(arr, _release, n)


def _release(n):
    global _current
    if _active:
        _current -= n


class PayloadStats:
    def __init__(self):
        self.peak_values = 0
        self.current_values = 0

    def snapshot(self):
        self.peak_values = _peak
        self.current_values = _current


@contextmanager
def track_payload():
    """Enable payload tracking; yields a PayloadStats updated on exit."""
    global _active, _current, _peak
    _active = True
    _current = 0
    _peak = 0
    stats = PayloadStats()
    try:
        yield stats
    finally:
        stats.snapshot()
        _active = False
