"""Single-process network of platforms on a virtual clock.

:class:`Runtime` implements the platform ``Host`` protocol: it owns the
clock, the event queue and the simulated links, and delivers every frame
to its receiver at send time plus link latency.  Runs are deterministic: the
only randomness is the agent-id generator seeded from ``seed``.
"""

from __future__ import annotations

import itertools
import random
from collections.abc import Callable, Iterable
from typing import Any

from .firmstore import Scenario
from .model import FirmId
from .platform import Platform
from .simnet import Delivered, Down, EventQueue, QueueEmpty, SimLink, VirtualClock, advance, link_send
from .wire import HEADER_SIZE, MsgType


class Runtime:
    def __init__(
        self,
        scenario: Scenario,
        seed: int = 0,
        *,
        horizon_ms: int | None = None,
        transport: Any = None,
    ):
        self.scenario = scenario
        self.seed = seed
        self.rng = random.Random(seed)
        self.clock = VirtualClock()
        self.queue = EventQueue()
        self.horizon_ms = scenario.horizon_ms if horizon_ms is None else horizon_ms
        self.links: dict[frozenset[FirmId], SimLink] = {
            spec.key: SimLink(spec) for spec in scenario.links
        }
        self.platforms: dict[FirmId, Platform] = {
            firm: Platform(scenario.configs[firm], scenario.stores[firm], self)
            for firm in scenario.firms
        }
        self.events: list[dict[str, Any]] = []
        self.observers: list[Callable[[dict[str, Any]], None]] = []
        self.hop_listeners: list[Callable[[FirmId, Any], None]] = []
        self._tickets = itertools.count(1)
        self.transport = transport
        # fault injection: ordinals (0-based) of TRANSFER frames to deliver twice
        self.duplicate_transfers: set[int] = set()
        self._transfer_count = 0

    # -- Host protocol ----------------------------------------------------

    @property
    def now(self) -> int:
        return self.clock.now_ms

    def latency(self, src: FirmId, dst: FirmId) -> int:
        link = self.links.get(frozenset((src, dst)))
        return 0 if link is None else link.latency_ms

    def schedule(self, at: int, action: Callable[[], Any], label: str = "") -> None:
        self.queue.push(max(at, self.now), action, label)

    def log(self, event: str, **fields: Any) -> None:
        entry = {"t": self.now, "event": event, **fields}
        self.events.append(entry)
        for observer in self.observers:
            observer(entry)

    def hop_completed(self, firm: FirmId, capsule: Any) -> None:
        for listener in self.hop_listeners:
            listener(firm, capsule)

    def send(self, src: FirmId, dst: FirmId, data: bytes) -> Delivered | Down | None:
        link = self.links.get(frozenset((src, dst)))
        if link is None:
            return None
        result = link_send(link, src, data, self.clock)
        if isinstance(result, Delivered):
            if self.transport is not None:
                data = self.transport.carry(src, dst, data)
            self._deliver_at(result.at_ms, src, dst, data)
            if len(data) > HEADER_SIZE and data[3] == MsgType.TRANSFER:
                if self._transfer_count in self.duplicate_transfers:
                    link.count(src, len(data))
                    self.log("duplicate_injected", src=src, dst=dst)
                    self._deliver_at(result.at_ms + 1, src, dst, data)
                self._transfer_count += 1
        return result

    def _deliver_at(self, at: int, src: FirmId, dst: FirmId, data: bytes) -> None:
        receiver = self.platforms[dst]
        self.queue.push(at, lambda: receiver.on_frame(src, data), f"frame {src}->{dst}")

    # -- driving ------------------------------------------------------------

    def next_ticket(self) -> int:
        return next(self._tickets)

    def new_agent_id(self) -> bytes:
        return self.rng.getrandbits(128).to_bytes(16, "big")

    def step(self) -> bool:
        try:
            event = advance(self.clock, self.queue)
        except QueueEmpty:
            return False
        event.action()
        return True

    def run(self, until: int | None = None) -> int:
        """Process events until the queue drains (or ``until``); returns the clock."""
        while self.queue:
            nxt = self.queue.peek_time()
            if until is not None and nxt is not None and nxt > until:
                break
            self.step()
        return self.now

    # -- accounting ---------------------------------------------------------

    def traffic(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for link in self.links.values():
            out.update(link.counters())
        return dict(sorted(out.items()))

    def total_bytes(self) -> int:
        return sum(link.total_bytes for link in self.links.values())

    def reset_counters(self) -> None:
        for link in self.links.values():
            link.reset()

    def events_of(self, kinds: Iterable[str]) -> list[dict[str, Any]]:
        kinds = set(kinds)
        return [e for e in self.events if e["event"] in kinds]
