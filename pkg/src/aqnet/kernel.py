"""Discrete-event engine: virtual millisecond clock, event heap, seeded RNG streams."""

from __future__ import annotations

import hashlib
import heapq
import random
from dataclasses import dataclass, field
from typing import Any, Callable, Hashable


class SchedulingError(ValueError):
    """Raised when an event is scheduled before the current virtual time."""


@dataclass(eq=False)
class SimEvent:
    fire_at: int
    seq: int
    target: Hashable
    action: Callable[..., Any]
    payload: tuple = ()
    cancelled: bool = False

    def cancel(self) -> None:
        self.cancelled = True


@dataclass
class Simulator:
    """Single-threaded event loop.

    Events fire in ``(fire_at, seq)`` order; ``seq`` is assigned at schedule
    time so equal-time events run in the order they were scheduled.
    """

    seed: int = 0
    record_trace: bool = False
    now: int = 0
    dispatched: int = 0
    trace: list[tuple[int, int, Hashable]] = field(default_factory=list)
    _heap: list = field(default_factory=list, repr=False)
    _seq: int = 0
    _streams: dict = field(default_factory=dict, repr=False)
    _hooks: list = field(default_factory=list, repr=False)

    def schedule(self, fire_at: int, target: Hashable, action: Callable[..., Any],
                 *payload: Any) -> SimEvent:
        if fire_at < self.now:
            raise SchedulingError(f"cannot schedule at t={fire_at} from t={self.now}")
        self._seq += 1
        ev = SimEvent(fire_at, self._seq, target, action, payload)
        heapq.heappush(self._heap, (fire_at, self._seq, ev))
        return ev

    def after(self, delay: int, target: Hashable, action: Callable[..., Any],
              *payload: Any) -> SimEvent:
        return self.schedule(self.now + delay, target, action, *payload)

    def add_hook(self, hook: Callable[[SimEvent], None]) -> None:
        """Call ``hook(event)`` after every dispatched event."""
        self._hooks.append(hook)

    def pending(self) -> int:
        return sum(1 for _, _, ev in self._heap if not ev.cancelled)

    def next_time(self) -> int | None:
        heap = self._heap
        while heap and heap[0][2].cancelled:
            heapq.heappop(heap)
        return heap[0][0] if heap else None

    def run_until(self, end: int) -> int:
        if end < self.now:
            raise SchedulingError(f"run_until({end}) is behind the clock ({self.now})")
        heap = self._heap
        hooks = self._hooks
        trace = self.trace if self.record_trace else None
        count = 0
        while heap and heap[0][0] <= end:
            fire_at, seq, ev = heapq.heappop(heap)
            if ev.cancelled:
                continue
            self.now = fire_at
            ev.cancelled = True  # a handle cancelled after dispatch is a no-op
            ev.action(*ev.payload)
            count += 1
            if trace is not None:
                trace.append((fire_at, seq, ev.target))
            for hook in hooks:
                hook(ev)
        self.now = end
        self.dispatched += count
        return count

    def rng(self, entity: Hashable) -> random.Random:
        """Independent stream for ``entity``; adding entities never perturbs others."""
        stream = self._streams.get(entity)
        if stream is None:
            stream = random.Random(derive_seed(self.seed, entity))
            self._streams[entity] = stream
        return stream


def derive_seed(master: int, entity: Hashable) -> int:
    digest = hashlib.sha256(f"{master & 0xFFFFFFFFFFFFFFFF}/{entity!r}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


def periodic(sim: Simulator, start: int, period: int, target: Hashable,
             action: Callable[[int], Any], count: int | None = None) -> None:
    """Fire ``action(k)`` at ``start + k * period`` for k = 0, 1, ... (``count`` times if given)."""

    def fire(k: int) -> None:
        action(k)
        if count is None or k + 1 < count:
            sim.schedule(start + (k + 1) * period, target, fire, k + 1)

    if count is None or count > 0:
        sim.schedule(start, target, fire, 0)
