"""Event clock and queue: 1 ns resolution, ties broken by insertion order."""

from __future__ import annotations

import heapq
import itertools
from typing import Callable

__all__ = ["Simulator", "SchedulingError"]

SECONDS = 1_000_000_000


class SchedulingError(ValueError):
    """Attempt to schedule an event in the past."""


class Simulator:
    """Single-threaded event loop; the only mutator of component state."""

    def __init__(self):
        self._now = 0
        self._seq = itertools.count()
        self._heap: list[tuple[int, int, Callable[[], None]]] = []

    @property
    def now_ns(self) -> int:
        return self._now

    def clock(self) -> int:
        return self._now

    def schedule_at(self, time_ns: int, fn: Callable[[], None]) -> None:
        if time_ns < self._now:
            raise SchedulingError(f"event at {time_ns} is before now {self._now}")
        heapq.heappush(self._heap, (time_ns, next(self._seq), fn))

    def schedule_in(self, delay_ns: int, fn: Callable[[], None]) -> None:
        self.schedule_at(self._now + max(0, int(delay_ns)), fn)

    def run_until(self, end_ns: int) -> int:
        """Run events with time <= end_ns; returns how many fired."""
        fired = 0
        while self._heap and self._heap[0][0] <= end_ns:
            time_ns, _, fn = heapq.heappop(self._heap)
            self._now = time_ns
            fn()
            fired += 1
        self._now = max(self._now, end_ns)
        return fired

    def pending(self) -> int:
        return len(self._heap)
