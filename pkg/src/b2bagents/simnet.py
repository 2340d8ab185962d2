"""Deterministic discrete-event core: virtual clock, event queue, links."""

from __future__ import annotations

import heapq
import itertools
from collections.abc import Callable
from dataclasses import dataclass, field
from typing import Any

from .model import FirmId, LinkSpec


class QueueEmpty(LookupError):
    pass


class ClockError(ValueError):
    pass


@dataclass
class VirtualClock:
    now_ms: int = 0

    def set(self, t: int) -> None:
        if t < self.now_ms:
            raise ClockError(f"clock cannot move back from {self.now_ms} to {t}")
        self.now_ms = t


@dataclass(order=True)
class Event:
    time: int
    seq: int
    action: Callable[[], Any] = field(compare=False)
    label: str = field(default="", compare=False)


class EventQueue:
    """Events ordered by (time, insertion sequence)."""

    def __init__(self) -> None:
        self._heap: list[Event] = []
        self._seq = itertools.count()

    def push(self, time: int, action: Callable[[], Any], label: str = "") -> Event:
        event = Event(int(time), next(self._seq), action, label)
        heapq.heappush(self._heap, event)
        return event

    def pop(self) -> Event:
        if not self._heap:
            raise QueueEmpty("no pending events")
        return heapq.heappop(self._heap)

    def peek_time(self) -> int | None:
        return self._heap[0].time if self._heap else None

    def __len__(self) -> int:
        return len(self._heap)


def advance(clock: VirtualClock, queue: EventQueue) -> Event:
    """Pop the earliest event and move the clock to its time."""
    event = queue.pop()
    clock.set(event.time)
    return event


@dataclass(frozen=True)
class Delivered:
    at_ms: int


@dataclass(frozen=True)
class Down:
    pass


DOWN = Down()


class SimLink:
    """A link with latency, an up/down schedule and per-direction byte counters."""

    def __init__(self, spec: LinkSpec):
        self.spec = spec
        self.bytes_a_to_b = 0
        self.bytes_b_to_a = 0
        self.frames_a_to_b = 0
        self.frames_b_to_a = 0

    @property
    def endpoints(self) -> tuple[FirmId, FirmId]:
        return self.spec.a, self.spec.b

    @property
    def latency_ms(self) -> int:
        return self.spec.latency_ms

    def is_up(self, now_ms: int) -> bool:
        return self.spec.is_up(now_ms)

    def count(self, sender: FirmId, nbytes: int) -> None:
        if sender == self.spec.a:
            self.bytes_a_to_b += nbytes
            self.frames_a_to_b += 1
        elif sender == self.spec.b:
            self.bytes_b_to_a += nbytes
            self.frames_b_to_a += 1
        else:
            raise ValueError(f"{sender} is not an endpoint of {self.spec.a}-{self.spec.b}")

    @property
    def total_bytes(self) -> int:
        return self.bytes_a_to_b + self.bytes_b_to_a

    def counters(self) -> dict[str, int]:
        return {
            f"{self.spec.a}->{self.spec.b}": self.bytes_a_to_b,
            f"{self.spec.b}->{self.spec.a}": self.bytes_b_to_a,
        }

    def reset(self) -> None:
        self.bytes_a_to_b = self.bytes_b_to_a = 0
        self.frames_a_to_b = self.frames_b_to_a = 0


def link_send(
    link: SimLink, sender: FirmId, frame_bytes: bytes, clock: VirtualClock
) -> Delivered | Down:
    """Attempt a send from ``sender``; down links refuse and count nothing."""
    if not link.is_up(clock.now_ms):
        # validate the direction even when refusing
        if sender not in link.endpoints:
            raise ValueError(f"{sender} is not an endpoint of this link")
        return DOWN
    link.count(sender, len(frame_bytes))
    return Delivered(clock.now_ms + link.latency_ms)
