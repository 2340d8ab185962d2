"""Per-firm agent platform: admission, trust scoping, registry, transfers.

A :class:`Platform` is driven by a host (the simulator runtime) that
provides the clock, the links and event scheduling through the small
:class:`Host` protocol.  All platform logic is single-threaded per call.
"""

from __future__ import annotations

import enum
import logging
from collections import OrderedDict
from collections.abc import Callable
from dataclasses import dataclass, field
from typing import Any, Protocol, Union

from .agent import (
    AgentCapsule,
    CapsuleMalformed,
    Done,
    Migrate,
    ReturnHome,
    decode_capsule,
    encode_capsule,
    execute_at,
    sign_capsule,
    verify_payload,
)
from .firmstore import FirmStore, ResourceAgent
from .model import (
    AccessScope,
    DecodingError,
    FirmId,
    PlatformConfig,
    TrustLevel,
    canonical_decode,
    canonical_encode,
)
from .simnet import Delivered, Down
from .wire import Frame, FrameError, MsgType, decode_frame, encode_frame

logger = logging.getLogger(__name__)

REPLAY_WINDOW = 1024


class RejectCode(enum.Enum):
    # declaration order is the admission check order
    UNKNOWN_ORIGIN = "UnknownOrigin"
    BAD_SIGNATURE = "BadSignature"
    SCHEMA_INVALID = "SchemaInvalid"
    BEHAVIOR_NOT_ALLOWED = "BehaviorNotAllowed"
    TTL_EXHAUSTED = "TtlExhausted"
    REPLAY = "Replay"


CHECK_ORDER: tuple[RejectCode, ...] = tuple(RejectCode)


@dataclass(frozen=True)
class Granted:
    scope: AccessScope
    capsule: AgentCapsule = field(repr=False, compare=False)


@dataclass(frozen=True)
class Rejected:
    code: RejectCode


Admission = Union[Granted, Rejected]


class Undeliverable(RuntimeError):
    pass


class BehaviorPanic(RuntimeError):
    pass


class ReplayWindow:
    """Bounded LRU set of recently admitted (agent id, hop index) pairs."""

    def __init__(self, capacity: int = REPLAY_WINDOW):
        self.capacity = capacity
        self._seen: OrderedDict[tuple[bytes, int], None] = OrderedDict()

    def __contains__(self, key: tuple[bytes, int]) -> bool:
        return key in self._seen

    def add(self, key: tuple[bytes, int]) -> None:
        self._seen[key] = None
        self._seen.move_to_end(key)
        while len(self._seen) > self.capacity:
            self._seen.popitem(last=False)

    def __len__(self) -> int:
        return len(self._seen)


def assign_scope(origin: FirmId, config: PlatformConfig) -> AccessScope:
    """Scope for agents owned by ``origin``; a firm's own agents get Full."""
    if origin == config.firm:
        return AccessScope.FULL
    return AccessScope.for_trust(config.trust.get(origin, TrustLevel.UNKNOWN))


def is_homecoming(capsule: AgentCapsule, firm: FirmId) -> bool:
    return capsule.home == firm and capsule.homebound


def _routed_here(capsule: AgentCapsule, firm: FirmId) -> bool:
    return is_homecoming(capsule, firm) or capsule.itinerary.next_stop == firm


def admit(
    payload: bytes,
    claimed_origin: FirmId,
    config: PlatformConfig,
    replay: ReplayWindow | None = None,
) -> Admission:
    """Run the admission pipeline on a TRANSFER payload.

    Checks, in order: the origin has a key, the signature verifies, the
    capsule decodes and is routed to this firm, its behaviour is
    whitelisted, its ttl is in ``(0, ttl_cap]`` (a capsule coming home may
    have ttl 0), and its (agent id, hop index) is not in the replay window.
    A granted admission is recorded in ``replay``.  Never raises.
    """
    key = config.keys.get(claimed_origin)
    if key is None:
        return Rejected(RejectCode.UNKNOWN_ORIGIN)
    if not verify_payload(payload, key):
        return Rejected(RejectCode.BAD_SIGNATURE)
    try:
        capsule = decode_capsule(payload)
    except CapsuleMalformed:
        return Rejected(RejectCode.SCHEMA_INVALID)
    if not _routed_here(capsule, config.firm):
        return Rejected(RejectCode.SCHEMA_INVALID)
    return _admit_decoded(capsule, config, replay)


def _admit_decoded(
    capsule: AgentCapsule, config: PlatformConfig, replay: ReplayWindow | None
) -> Admission:
    if capsule.behavior not in config.behavior_whitelist:
        return Rejected(RejectCode.BEHAVIOR_NOT_ALLOWED)
    if not is_homecoming(capsule, config.firm) and not 0 < capsule.ttl <= config.ttl_cap:
        return Rejected(RejectCode.TTL_EXHAUSTED)
    replay_key = (capsule.agent_id, len(capsule.hops))
    if replay is not None:
        if replay_key in replay:
            return Rejected(RejectCode.REPLAY)
        replay.add(replay_key)
    return Granted(assign_scope(capsule.home, config), capsule)


class RegistryState(enum.Enum):
    RUNNING = "Running"
    AWAITING_TRANSFER = "AwaitingTransfer"
    DEPARTED = "Departed"
    REJECTED = "Rejected"


@dataclass
class RegistryEntry:
    agent_id: bytes
    origin: FirmId
    behavior: str
    state: RegistryState
    admitted_at: int
    hop: int = 0
    note: str = ""

    def to_doc(self) -> dict[str, Any]:
        return {
            "agent_id": self.agent_id.hex(),
            "origin": self.origin,
            "behavior": self.behavior,
            "state": self.state.value,
            "admitted_at": self.admitted_at,
            "hop": self.hop,
            "note": self.note,
        }


class Registry:
    """Agents admitted by one platform; one entry per admission."""

    def __init__(self) -> None:
        self._entries: list[RegistryEntry] = []
        self._by_key: dict[tuple[bytes, int], RegistryEntry] = {}

    def add(self, capsule: AgentCapsule, now: int) -> RegistryEntry:
        for entry in self._entries:
            if entry.agent_id == capsule.agent_id and entry.state is RegistryState.RUNNING:
                raise RuntimeError(f"agent {capsule.agent_hex} is already running here")
        entry = RegistryEntry(
            agent_id=capsule.agent_id,
            origin=capsule.home,
            behavior=capsule.behavior,
            state=RegistryState.RUNNING,
            admitted_at=now,
            hop=len(capsule.hops),
        )
        self._entries.append(entry)
        self._by_key[(capsule.agent_id, entry.hop)] = entry
        return entry

    def get(self, agent_id: bytes, hop: int) -> RegistryEntry | None:
        return self._by_key.get((agent_id, hop))

    def transition(self, entry: RegistryEntry, state: RegistryState, note: str = "") -> None:
        allowed = _TRANSITIONS[entry.state]
        if state not in allowed:
            raise RuntimeError(f"registry entry cannot go {entry.state.value} -> {state.value}")
        entry.state = state
        if note:
            entry.note = note

    def snapshot(self) -> list[RegistryEntry]:
        return sorted(
            (RegistryEntry(**vars(e)) for e in self._entries),
            key=lambda e: (e.admitted_at, e.agent_id, e.hop),
        )


_TRANSITIONS = {
    RegistryState.RUNNING: {
        RegistryState.AWAITING_TRANSFER,
        RegistryState.DEPARTED,
        RegistryState.REJECTED,
    },
    RegistryState.AWAITING_TRANSFER: {RegistryState.DEPARTED, RegistryState.REJECTED},
    RegistryState.DEPARTED: set(),
    RegistryState.REJECTED: set(),
}


class Host(Protocol):
    """What a platform needs from the network that hosts it."""

    now: int
    horizon_ms: int

    def send(self, src: FirmId, dst: FirmId, data: bytes) -> Delivered | Down | None: ...

    def latency(self, src: FirmId, dst: FirmId) -> int: ...

    def schedule(self, at: int, action: Callable[[], Any], label: str = "") -> None: ...

    def log(self, event: str, **fields: Any) -> None: ...


class InterfaceSink(Protocol):
    def on_homecoming(self, capsule: AgentCapsule) -> None: ...

    def on_failure(self, agent_id: bytes, reason: str) -> None: ...


@dataclass
class Outbound:
    capsule: AgentCapsule
    dest: FirmId
    data: bytes
    hop: int
    attempts: int = 0
    retries: int = 0
    done: bool = False
    delivered_at: int | None = None


@dataclass(frozen=True)
class Intent:
    """What a platform decided to do with a capsule after running it."""

    action: Migrate | ReturnHome | Done
    capsule: AgentCapsule


class Platform:
    """One firm's agent platform with its supervisor and resource agent."""

    def __init__(self, config: PlatformConfig, store: FirmStore, host: Host):
        if store.firm != config.firm:
            raise ValueError("store and config belong to different firms")
        self.config = config
        self.store = store
        self.resources = ResourceAgent(store)
        self.host = host
        self.registry = Registry()
        self.replay = ReplayWindow()
        self.interface: InterfaceSink | None = None
        self.outbound: dict[FirmId, dict[tuple[bytes, int], Outbound]] = {}
        self.executions = 0

    @property
    def firm(self) -> FirmId:
        return self.config.firm

    def registry_snapshot(self) -> list[RegistryEntry]:
        return self.registry.snapshot()

    # -- frames -----------------------------------------------------------

    def _send_frame(self, dest: FirmId, msg_type: MsgType, payload: bytes) -> Delivered | Down | None:
        key = self.config.keys.get(dest)
        if key is None:
            return None
        data = encode_frame(Frame(msg_type, self.firm, payload), key)
        return self.host.send(self.firm, dest, data)

    def on_frame(self, sender: FirmId, data: bytes) -> None:
        key = self.config.keys.get(sender)
        if key is None:
            self.host.log("frame_dropped", firm=self.firm, sender=sender, reason="no key")
            return
        try:
            frame = decode_frame(data, key, sender)
        except FrameError as exc:
            self.host.log("frame_dropped", firm=self.firm, sender=sender, reason=type(exc).__name__)
            return
        handler = {
            MsgType.TRANSFER: self._on_transfer,
            MsgType.ACK: self._on_ack,
            MsgType.REJECT: self._on_reject,
            MsgType.RESULT: self._on_result,
            MsgType.HELLO: self._on_hello,
        }[frame.msg_type]
        handler(sender, frame.payload)

    def _on_hello(self, sender: FirmId, payload: bytes) -> None:
        self.host.log("hello", firm=self.firm, sender=sender)

    def _on_transfer(self, sender: FirmId, payload: bytes) -> None:
        admission = admit(payload, sender, self.config, self.replay)
        if isinstance(admission, Granted):
            capsule = admission.capsule
            self.host.log(
                "admitted",
                firm=self.firm,
                sender=sender,
                agent=capsule.agent_hex,
                hop=len(capsule.hops),
                scope=admission.scope.label,
            )
            self._send_frame(sender, MsgType.ACK, _ack_payload(capsule.agent_id, len(capsule.hops)))
            self.run_agent(capsule, admission.scope)
            return
        agent_hex, hop = _peek_identity(payload)
        self.host.log(
            "rejected", firm=self.firm, sender=sender, agent=agent_hex, hop=hop,
            code=admission.code.value,
        )
        if admission.code is RejectCode.REPLAY and agent_hex is not None:
            # the earlier copy was admitted; acknowledge again so the sender stops
            self._send_frame(sender, MsgType.ACK, _ack_payload(bytes.fromhex(agent_hex), hop))
            return
        body = {"agent_id": agent_hex, "hop": hop, "code": admission.code.value}
        self._send_frame(sender, MsgType.REJECT, canonical_encode(body))

    def _find_outbound(self, dest: FirmId, payload: bytes) -> Outbound | None:
        try:
            doc = canonical_decode(payload)
            key = (bytes.fromhex(doc["agent_id"]), int(doc["hop"]))
        except (DecodingError, KeyError, TypeError, ValueError):
            return None
        return self.outbound.get(dest, {}).get(key)

    def _on_ack(self, sender: FirmId, payload: bytes) -> None:
        ob = self._find_outbound(sender, payload)
        if ob is None or ob.done:
            self.host.log("ack_ignored", firm=self.firm, sender=sender)
            return
        ob.done = True
        ob.delivered_at = self.host.now
        self.host.log("delivered", firm=self.firm, dest=sender, agent=ob.capsule.agent_hex, hop=ob.hop)
        entry = self.registry.get(ob.capsule.agent_id, len(ob.capsule.hops) - 1)
        if entry is not None and entry.state is RegistryState.AWAITING_TRANSFER:
            self.registry.transition(entry, RegistryState.DEPARTED)

    def _on_reject(self, sender: FirmId, payload: bytes) -> None:
        ob = self._find_outbound(sender, payload)
        try:
            code = canonical_decode(payload).get("code", "?")
        except (DecodingError, AttributeError):
            code = "?"
        if ob is None or ob.done:
            self.host.log("reject_ignored", firm=self.firm, sender=sender, code=code)
            return
        ob.done = True
        entry = self.registry.get(ob.capsule.agent_id, len(ob.capsule.hops) - 1)
        if entry is not None and entry.state is RegistryState.AWAITING_TRANSFER:
            self.registry.transition(entry, RegistryState.REJECTED, f"rejected by {sender}: {code}")
        self._report_error(ob.capsule, f"rejected by {sender}: {code}")

    def _on_result(self, sender: FirmId, payload: bytes) -> None:
        try:
            doc = canonical_decode(payload)
            agent_id = bytes.fromhex(doc["agent_id"])
            reason = str(doc["error"])
        except (DecodingError, KeyError, TypeError, ValueError):
            self.host.log("result_dropped", firm=self.firm, sender=sender)
            return
        self.host.log("result_error", firm=self.firm, sender=sender, agent=agent_id.hex(), reason=reason)
        if self.interface is not None:
            self.interface.on_failure(agent_id, reason)

    # -- execution --------------------------------------------------------

    def launch(self, capsule: AgentCapsule) -> None:
        """Start a capsule configured at this (home) platform."""
        if capsule.home != self.firm:
            raise ValueError("agents are launched from their home platform")
        first = capsule.itinerary.next_stop
        self.host.log("launched", firm=self.firm, agent=capsule.agent_hex, first=first)
        if first == self.firm:
            admission = _admit_decoded(capsule, self.config, self.replay)
            if isinstance(admission, Rejected):
                self._report_error(capsule, f"local admission failed: {admission.code.value}")
                return
            self.host.log(
                "admitted", firm=self.firm, sender=self.firm, agent=capsule.agent_hex,
                hop=0, scope=admission.scope.label,
            )
            self.run_agent(capsule, admission.scope)
        else:
            self.dispatch(capsule, first)

    def run_agent(self, capsule: AgentCapsule, scope: AccessScope) -> Intent:
        """Execute one admitted visit and act on the resulting next action."""
        entry = self.registry.add(capsule, self.host.now)
        if is_homecoming(capsule, self.firm):
            self.registry.transition(entry, RegistryState.DEPARTED, "returned home")
            self.host.log("homecoming", firm=self.firm, agent=capsule.agent_hex, hop=entry.hop)
            if self.interface is not None:
                self.interface.on_homecoming(capsule)
            return Intent(Done(), capsule)
        try:
            self.executions += 1
            self.host.log("execute", firm=self.firm, agent=capsule.agent_hex, hop=entry.hop)
            updated, action = execute_at(capsule, self.firm, self.resources, scope, self.host.now)
        except Exception as exc:  # behaviours must never take the platform down
            reason = f"behavior panic at {self.firm}: {type(exc).__name__}: {exc}"
            self.registry.transition(entry, RegistryState.REJECTED, reason)
            self.host.log("panic", firm=self.firm, agent=capsule.agent_hex, reason=reason)
            self._report_error(capsule, reason)
            return Intent(Done(), capsule)
        hook = getattr(self.host, "hop_completed", None)
        if hook is not None:
            hook(self.firm, updated)
        if isinstance(action, Done):
            self.registry.transition(entry, RegistryState.DEPARTED, "finished at home")
            self.host.log("homecoming", firm=self.firm, agent=updated.agent_hex, hop=len(updated.hops))
            if self.interface is not None:
                self.interface.on_homecoming(updated)
            return Intent(action, updated)
        dest = action.dest if isinstance(action, Migrate) else updated.home
        self.registry.transition(entry, RegistryState.AWAITING_TRANSFER)
        self.dispatch(updated, dest)
        return Intent(action, updated)

    # -- transfers --------------------------------------------------------

    def dispatch(self, capsule: AgentCapsule, dest: FirmId) -> Outbound | None:
        """Sign ``capsule`` for ``dest`` and send it, retrying until acknowledged."""
        key = self.config.keys.get(dest)
        if key is None:
            self._undeliverable_capsule(capsule, dest, f"no key shared with {dest}")
            return None
        signed = sign_capsule(capsule, key)
        data = encode_frame(Frame(MsgType.TRANSFER, self.firm, encode_capsule(signed)), key)
        ob = Outbound(capsule=signed, dest=dest, data=data, hop=len(signed.hops))
        self.outbound.setdefault(dest, {})[(signed.agent_id, ob.hop)] = ob
        self._attempt(ob)
        return ob

    def _attempt(self, ob: Outbound) -> None:
        if ob.done:
            return
        now = self.host.now
        if now > self.host.horizon_ms:
            self._give_up(ob, "simulation horizon reached")
            return
        result = self.host.send(self.firm, ob.dest, ob.data)
        ob.attempts += 1
        attempt = ob.attempts - 1
        if result is None:
            self._give_up(ob, f"no link to {ob.dest}")
            return
        if attempt > 0:
            ob.retries += 1
        backoff = self.config.backoff(attempt)
        if isinstance(result, Down):
            self.host.log("link_down", firm=self.firm, dest=ob.dest, agent=ob.capsule.agent_hex, attempt=attempt)
            self.host.schedule(now + backoff, lambda: self._attempt(ob), "retry")
        else:
            self.host.log("sent", firm=self.firm, dest=ob.dest, agent=ob.capsule.agent_hex, attempt=attempt, arrive=result.at_ms)
            timeout = 2 * self.host.latency(self.firm, ob.dest) + backoff
            self.host.schedule(now + timeout, lambda: self._attempt(ob), "ack-timeout")

    def _give_up(self, ob: Outbound, reason: str) -> None:
        ob.done = True
        entry = self.registry.get(ob.capsule.agent_id, len(ob.capsule.hops) - 1)
        if entry is not None and entry.state is RegistryState.AWAITING_TRANSFER:
            self.registry.transition(entry, RegistryState.REJECTED, f"undeliverable: {reason}")
        self._undeliverable_capsule(ob.capsule, ob.dest, reason)

    def _undeliverable_capsule(self, capsule: AgentCapsule, dest: FirmId, reason: str) -> None:
        self.host.log("undeliverable", firm=self.firm, dest=dest, agent=capsule.agent_hex, reason=reason)
        self._report_error(capsule, f"undeliverable to {dest}: {reason}")

    def _report_error(self, capsule: AgentCapsule, reason: str) -> None:
        if capsule.home == self.firm:
            if self.interface is not None:
                self.interface.on_failure(capsule.agent_id, reason)
            return
        body = canonical_encode({"agent_id": capsule.agent_hex, "error": reason, "firm": self.firm})
        result = self._send_frame(capsule.home, MsgType.RESULT, body)
        if not isinstance(result, Delivered):
            self.host.log("result_unreported", firm=self.firm, agent=capsule.agent_hex, reason=reason)


def _ack_payload(agent_id: bytes, hop: int) -> bytes:
    return canonical_encode({"agent_id": agent_id.hex(), "hop": hop})


def _peek_identity(payload: bytes) -> tuple[str | None, int | None]:
    """Best-effort agent id and hop index of a payload that failed admission."""
    try:
        doc = canonical_decode(payload, strict=False)
        agent = doc["agent_id"]
        bytes.fromhex(agent)
        return agent, len(doc["hops"])
    except Exception:
        return None, None
