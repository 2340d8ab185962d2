"""The mobile agent: a signed, serialisable capsule and its behaviours.

Only state travels between platforms.  Each platform executes a capsule
with the behaviour implementation registered under ``capsule.behavior`` in
:data:`BEHAVIORS`; a behaviour step takes one visit and returns the updated
capsule plus the next action.
"""

from __future__ import annotations

import enum
import hmac
import re
import secrets
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field, replace
from typing import Any, Final, Union

from .firmstore import NotHeld, QueryCriteria, ResourceAgent, ScopeDenied
from .model import (
    MAX_TTL,
    AccessScope,
    CustodyEvent,
    DecodingError,
    FirmId,
    ProductId,
    ProductRecord,
    canonical_decode,
    canonical_encode,
    check_firm_id,
    check_product_id,
    is_firm_id,
)
from .wire import mac

TRACE_BEHAVIOR: Final = "trace.v1"
SEARCH_BEHAVIOR: Final = "search.v1"

AGENT_ID_SIZE: Final = 16
SIGNATURE_SIZE: Final = 32

# Top-level keys sort as ..., "results", "signature", "ttl", so a canonical
# capsule always ends with the signature followed by the integer ttl.
_SIGNED_TAIL: Final = re.compile(rb',"signature":"([0-9a-f]{64})","ttl":(-?[0-9]+)\}\Z')


class BadConfig(ValueError):
    """An agent was configured inconsistently at launch."""


class CapsuleMalformed(ValueError):
    pass


class AgentStateError(RuntimeError):
    """A capsule was executed somewhere its itinerary does not place it."""


@dataclass(frozen=True)
class TraceGoal:
    product: ProductId

    def __post_init__(self) -> None:
        check_product_id(self.product)

    def to_doc(self) -> dict[str, Any]:
        return {"kind": "trace", "product": self.product}


@dataclass(frozen=True)
class SearchGoal:
    criteria: QueryCriteria = field(default_factory=QueryCriteria)
    visit: tuple[FirmId, ...] | None = None

    def __post_init__(self) -> None:
        if self.visit is not None:
            object.__setattr__(self, "visit", tuple(check_firm_id(f) for f in self.visit))

    def to_doc(self) -> dict[str, Any]:
        return {
            "kind": "search",
            "criteria": self.criteria.to_doc(),
            "visit": None if self.visit is None else list(self.visit),
        }


GoalSpec = Union[TraceGoal, SearchGoal]


def goal_from_doc(doc: Any) -> GoalSpec:
    if not isinstance(doc, dict):
        raise ValueError("goal must be a map")
    kind = doc.get("kind")
    if kind == "trace":
        if set(doc) != {"kind", "product"}:
            raise ValueError("trace goal has unexpected keys")
        return TraceGoal(doc["product"])
    if kind == "search":
        if set(doc) != {"kind", "criteria", "visit"}:
            raise ValueError("search goal has unexpected keys")
        visit = doc["visit"]
        if visit is not None and not isinstance(visit, list):
            raise ValueError("visit must be a list or null")
        return SearchGoal(
            criteria=QueryCriteria.from_doc(doc["criteria"]),
            visit=None if visit is None else tuple(visit),
        )
    raise ValueError(f"unknown goal kind {kind!r}")


@dataclass(frozen=True)
class Itinerary:
    planned: tuple[FirmId, ...]
    position: int = 0
    fixed: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "planned", tuple(self.planned))
        for firm in self.planned:
            check_firm_id(firm)
        if not 0 <= self.position <= len(self.planned):
            raise ValueError("itinerary position out of range")

    @property
    def exhausted(self) -> bool:
        return self.position >= len(self.planned)

    @property
    def next_stop(self) -> FirmId | None:
        return None if self.exhausted else self.planned[self.position]

    def to_doc(self) -> dict[str, Any]:
        return {"planned": list(self.planned), "position": self.position, "fixed": self.fixed}


class Outcome(enum.Enum):
    COLLECTED = "Collected"
    NOT_HELD = "NotHeld"
    DENIED = "Denied"


@dataclass(frozen=True)
class HopEntry:
    firm: FirmId
    arrived_at: int
    scope_granted: AccessScope
    outcome: Outcome

    def to_doc(self) -> dict[str, Any]:
        return {
            "firm": self.firm,
            "arrived_at": self.arrived_at,
            "scope_granted": self.scope_granted.label,
            "outcome": self.outcome.value,
        }


@dataclass(frozen=True)
class Collected:
    """One result item, tagged with the firm whose resource agent produced it."""

    firm: FirmId
    item: ProductRecord | CustodyEvent

    @property
    def kind(self) -> str:
        return "custody" if isinstance(self.item, CustodyEvent) else "record"

    @property
    def product(self) -> ProductId:
        return self.item.product

    @property
    def identity(self) -> tuple[str, str, str]:
        return (self.item.product, self.firm, self.kind)

    def to_doc(self) -> dict[str, Any]:
        return {"firm": self.firm, self.kind: self.item.to_doc()}

    @classmethod
    def from_doc(cls, doc: Any) -> Collected:
        if not isinstance(doc, dict) or len(doc) != 2 or "firm" not in doc:
            raise ValueError("result entry must be {firm, record|custody}")
        firm = check_firm_id(doc["firm"])
        if "record" in doc:
            return cls(firm, ProductRecord.from_doc(doc["record"]))
        if "custody" in doc:
            return cls(firm, CustodyEvent.from_doc(doc["custody"]))
        raise ValueError("result entry must carry a record or a custody event")


@dataclass(frozen=True)
class AgentCapsule:
    agent_id: bytes
    home: FirmId
    behavior: str
    goal: GoalSpec
    itinerary: Itinerary
    hops: tuple[HopEntry, ...] = ()
    results: tuple[Collected, ...] = ()
    ttl: int = 16
    signature: bytes = bytes(SIGNATURE_SIZE)

    @property
    def agent_hex(self) -> str:
        return self.agent_id.hex()

    @property
    def homebound(self) -> bool:
        """True once the agent has nothing left to do but go home."""
        return self.itinerary.exhausted or self.ttl == 0

    def unsigned_doc(self) -> dict[str, Any]:
        return {
            "agent_id": self.agent_id.hex(),
            "home": self.home,
            "behavior": self.behavior,
            "goal": self.goal.to_doc(),
            "itinerary": self.itinerary.to_doc(),
            "hops": [h.to_doc() for h in self.hops],
            "results": [r.to_doc() for r in self.results],
            "ttl": self.ttl,
        }

    def to_doc(self) -> dict[str, Any]:
        doc = self.unsigned_doc()
        doc["signature"] = self.signature.hex()
        return doc


@dataclass(frozen=True)
class Migrate:
    dest: FirmId


@dataclass(frozen=True)
class ReturnHome:
    pass


@dataclass(frozen=True)
class Done:
    pass


NextAction = Union[Migrate, ReturnHome, Done]


# --------------------------------------------------------------------------
# signing and codec


def signed_region(capsule: AgentCapsule) -> bytes:
    return canonical_encode(capsule.unsigned_doc())


def sign_capsule(capsule: AgentCapsule, key: bytes) -> AgentCapsule:
    return replace(capsule, signature=mac(key, signed_region(capsule)))


def verify_capsule(capsule: AgentCapsule, key: bytes) -> bool:
    return hmac.compare_digest(capsule.signature, mac(key, signed_region(capsule)))


def verify_payload(payload: bytes, key: bytes) -> bool:
    """Check a capsule signature on raw bytes, before any parsing.

    The signed region is the payload with its ``signature`` member removed,
    which for a canonical capsule is exactly the canonical encoding of the
    remaining fields.
    """
    payload = bytes(payload)
    m = _SIGNED_TAIL.search(payload)
    if m is None:
        return False
    region = payload[: m.start()] + b',"ttl":' + m.group(2) + b"}"
    return hmac.compare_digest(bytes.fromhex(m.group(1).decode()), mac(key, region))


def encode_capsule(capsule: AgentCapsule) -> bytes:
    return canonical_encode(capsule.to_doc())


_CAPSULE_KEYS: Final = frozenset(
    {"agent_id", "home", "behavior", "goal", "itinerary", "hops", "results", "ttl", "signature"}
)


def _hex_bytes(value: Any, size: int, what: str) -> bytes:
    if not isinstance(value, str) or len(value) != 2 * size or value != value.lower():
        raise ValueError(f"{what} must be {2 * size} lowercase hex digits")
    return bytes.fromhex(value)


def _int(value: Any, what: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ValueError(f"{what} must be an integer")
    return value


def _hop_from_doc(doc: Any) -> HopEntry:
    if not isinstance(doc, dict) or set(doc) != {"firm", "arrived_at", "scope_granted", "outcome"}:
        raise ValueError("malformed hop entry")
    return HopEntry(
        firm=check_firm_id(doc["firm"]),
        arrived_at=_int(doc["arrived_at"], "arrived_at"),
        scope_granted=AccessScope.parse(doc["scope_granted"]),
        outcome=Outcome(doc["outcome"]),
    )


def capsule_from_doc(doc: Any) -> AgentCapsule:
    """Build a capsule from its document form, validating the schema."""
    try:
        if not isinstance(doc, dict) or set(doc) != _CAPSULE_KEYS:
            raise ValueError("capsule must have exactly the capsule fields")
        itin = doc["itinerary"]
        if not isinstance(itin, dict) or set(itin) != {"planned", "position", "fixed"}:
            raise ValueError("malformed itinerary")
        if not isinstance(itin["planned"], list) or not isinstance(itin["fixed"], bool):
            raise ValueError("malformed itinerary")
        if not isinstance(doc["hops"], list) or not isinstance(doc["results"], list):
            raise ValueError("hops and results must be lists")
        behavior = doc["behavior"]
        if not isinstance(behavior, str) or not behavior:
            raise ValueError("behavior must be a non-empty string")
        ttl = _int(doc["ttl"], "ttl")
        if ttl < 0:
            raise ValueError("ttl must be >= 0")
        goal = goal_from_doc(doc["goal"])
        if behavior == TRACE_BEHAVIOR and not isinstance(goal, TraceGoal):
            raise ValueError("trace behaviour needs a trace goal")
        if behavior == SEARCH_BEHAVIOR and not isinstance(goal, SearchGoal):
            raise ValueError("search behaviour needs a search goal")
        return AgentCapsule(
            agent_id=_hex_bytes(doc["agent_id"], AGENT_ID_SIZE, "agent_id"),
            home=check_firm_id(doc["home"]),
            behavior=behavior,
            goal=goal,
            itinerary=Itinerary(
                planned=tuple(itin["planned"]),
                position=_int(itin["position"], "position"),
                fixed=itin["fixed"],
            ),
            hops=tuple(_hop_from_doc(h) for h in doc["hops"]),
            results=tuple(Collected.from_doc(r) for r in doc["results"]),
            ttl=ttl,
            signature=_hex_bytes(doc["signature"], SIGNATURE_SIZE, "signature"),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise CapsuleMalformed(str(exc)) from None


def decode_capsule(data: bytes) -> AgentCapsule:
    try:
        doc = canonical_decode(data)
    except DecodingError as exc:
        raise CapsuleMalformed(str(exc)) from None
    return capsule_from_doc(doc)


# --------------------------------------------------------------------------
# launch and execution


def new_agent(
    goal: GoalSpec,
    home: FirmId,
    itinerary: Itinerary,
    ttl: int,
    key: bytes,
    *,
    agent_id: bytes | None = None,
    behavior: str | None = None,
) -> AgentCapsule:
    """Configure a fresh agent at its home platform and sign it.

    Raises:
        BadConfig: ttl outside (0, 64] or an itinerary that does not fit the goal.
    """
    if isinstance(ttl, bool) or not isinstance(ttl, int) or not 0 < ttl <= MAX_TTL:
        raise BadConfig(f"ttl must be in (0, {MAX_TTL}], got {ttl!r}")
    if not is_firm_id(home):
        raise BadConfig(f"invalid home firm {home!r}")
    if itinerary.position != 0:
        raise BadConfig("a new agent starts at itinerary position 0")
    if isinstance(goal, TraceGoal):
        if not itinerary.fixed or len(itinerary.planned) != 1:
            raise BadConfig("a trace agent starts with a fixed itinerary of one stop")
        behavior = behavior or TRACE_BEHAVIOR
    elif isinstance(goal, SearchGoal):
        if itinerary.fixed:
            raise BadConfig("search itineraries are planned, not fixed")
        if not itinerary.planned:
            raise BadConfig("search itinerary is empty")
        if len(set(itinerary.planned)) != len(itinerary.planned):
            raise BadConfig("search itinerary visits a firm twice")
        if goal.visit is not None and tuple(goal.visit) != itinerary.planned:
            raise BadConfig("itinerary differs from the explicit visit list")
        behavior = behavior or SEARCH_BEHAVIOR
    else:
        raise BadConfig(f"unsupported goal {goal!r}")
    if agent_id is None:
        agent_id = secrets.token_bytes(AGENT_ID_SIZE)
    if len(agent_id) != AGENT_ID_SIZE:
        raise BadConfig("agent_id must be 16 bytes")
    capsule = AgentCapsule(
        agent_id=agent_id,
        home=home,
        behavior=behavior,
        goal=goal,
        itinerary=itinerary,
        ttl=ttl,
    )
    return sign_capsule(capsule, key)


def local_filter(
    records: Sequence[ProductRecord], criteria: QueryCriteria
) -> list[ProductRecord]:
    """Keep only records whose visible fields satisfy ``criteria``.

    Redaction can hide a field a criterion tests; such records are dropped.
    """
    return [r for r in records if criteria.matches(r)]


def _after_hop(capsule: AgentCapsule, firm: FirmId) -> NextAction:
    if capsule.homebound:
        return Done() if firm == capsule.home else ReturnHome()
    return Migrate(capsule.itinerary.planned[capsule.itinerary.position])


def _trace_step(
    capsule: AgentCapsule, firm: FirmId, access: ResourceAgent, scope: AccessScope, now: int
) -> tuple[AgentCapsule, NextAction]:
    assert isinstance(capsule.goal, TraceGoal)
    itin = capsule.itinerary
    results = capsule.results
    predecessor = None
    try:
        events, predecessor = access.custody(capsule.goal.product, scope)
        results = results + tuple(Collected(firm, e) for e in events)
        outcome = Outcome.COLLECTED
    except ScopeDenied:
        outcome = Outcome.DENIED
    except NotHeld:
        outcome = Outcome.NOT_HELD
    ttl = capsule.ttl - 1
    planned = itin.planned
    if predecessor is not None and ttl > 0:
        planned = planned + (predecessor,)
    updated = replace(
        capsule,
        itinerary=replace(itin, planned=planned, position=itin.position + 1),
        hops=capsule.hops + (HopEntry(firm, now, scope, outcome),),
        results=results,
        ttl=ttl,
    )
    return updated, _after_hop(updated, firm)


def _search_step(
    capsule: AgentCapsule, firm: FirmId, access: ResourceAgent, scope: AccessScope, now: int
) -> tuple[AgentCapsule, NextAction]:
    assert isinstance(capsule.goal, SearchGoal)
    criteria = capsule.goal.criteria
    results = capsule.results
    try:
        found = local_filter(access.query(criteria, scope), criteria)
        results = results + tuple(Collected(firm, r) for r in found)
        outcome = Outcome.COLLECTED
    except ScopeDenied:
        outcome = Outcome.DENIED
    updated = replace(
        capsule,
        itinerary=replace(capsule.itinerary, position=capsule.itinerary.position + 1),
        hops=capsule.hops + (HopEntry(firm, now, scope, outcome),),
        results=results,
        ttl=capsule.ttl - 1,
    )
    return updated, _after_hop(updated, firm)


Behavior = Callable[
    [AgentCapsule, FirmId, ResourceAgent, AccessScope, int], "tuple[AgentCapsule, NextAction]"
]

BEHAVIORS: dict[str, Behavior] = {
    TRACE_BEHAVIOR: _trace_step,
    SEARCH_BEHAVIOR: _search_step,
}


def execute_at(
    capsule: AgentCapsule,
    firm: FirmId,
    access: ResourceAgent,
    scope: AccessScope,
    now: int = 0,
) -> tuple[AgentCapsule, NextAction]:
    """Run one visit of ``capsule`` at ``firm`` through its resource agent."""
    if capsule.itinerary.next_stop != firm:
        raise AgentStateError(
            f"agent {capsule.agent_hex} is due at {capsule.itinerary.next_stop}, not {firm}"
        )
    if capsule.ttl <= 0:
        raise AgentStateError(f"agent {capsule.agent_hex} has no hops left")
    if access.firm != firm:
        raise AgentStateError(f"resource agent of {access.firm} offered at {firm}")
    try:
        step = BEHAVIORS[capsule.behavior]
    except KeyError:
        raise AgentStateError(f"no behaviour registered as {capsule.behavior!r}") from None
    return step(capsule, firm, access, scope, now)
