"""Core value types and the canonical byte encoding.

Every structure that crosses a platform boundary is reduced to a plain
document (dicts, lists, strings, ints, bools, ``None``) and encoded with
:func:`canonical_encode`.  Equal documents always produce identical bytes,
which is what signatures, frame tags and determinism tests rely on.
"""

from __future__ import annotations

import enum
import json
import re
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field
from typing import Any, Final

FirmId = str
ProductId = str

_FIRM_RE: Final = re.compile(r"^[A-Z0-9]{1,16}$")
_PRODUCT_RE: Final = re.compile(r"^[\x21-\x7e]{1,64}$")

MAX_TTL: Final[int] = 64
DEFAULT_BACKOFF_MS: Final[tuple[int, ...]] = (100, 200, 400, 800, 1600)
DEFAULT_BEHAVIORS: Final[frozenset[str]] = frozenset({"trace.v1", "search.v1"})


class EncodingUnsupported(ValueError):
    """A document contains a node with no canonical representation."""


class DecodingError(ValueError):
    """Bytes are not a canonical document."""


class ChainInconsistent(ValueError):
    """Custody events do not form a single linear chain."""


def is_firm_id(value: object) -> bool:
    return isinstance(value, str) and _FIRM_RE.match(value) is not None


def is_product_id(value: object) -> bool:
    return isinstance(value, str) and _PRODUCT_RE.match(value) is not None


def check_firm_id(value: object) -> FirmId:
    if not is_firm_id(value):
        raise ValueError(f"invalid firm id {value!r}")
    return value  # type: ignore[return-value]


def check_product_id(value: object) -> ProductId:
    if not is_product_id(value):
        raise ValueError(f"invalid product id {value!r}")
    return value  # type: ignore[return-value]


# --------------------------------------------------------------------------
# canonical encoding


def _check_node(value: Any, path: str) -> None:
    if value is None or isinstance(value, (bool, str)):
        return
    if isinstance(value, int):
        return
    if isinstance(value, float):
        raise EncodingUnsupported(f"{path}: floating point values are not representable")
    if isinstance(value, Mapping):
        for key, item in value.items():
            if not isinstance(key, str):
                raise EncodingUnsupported(f"{path}: map key {key!r} is not a string")
            _check_node(item, f"{path}.{key}")
        return
    if isinstance(value, (list, tuple)):
        for i, item in enumerate(value):
            _check_node(item, f"{path}[{i}]")
        return
    raise EncodingUnsupported(f"{path}: unsupported type {type(value).__name__}")


def canonical_encode(value: Any) -> bytes:
    """Encode a document as deterministic UTF-8 JSON.

    Keys are sorted by code point, there is no insignificant whitespace and
    integers are written in decimal.  Floats are rejected outright so that
    no two platforms can disagree on a number's spelling.

    Raises:
        EncodingUnsupported: for floats, non-string keys or foreign types.
    """
    _check_node(value, "$")
    text = json.dumps(
        value,
        sort_keys=True,
        separators=(",", ":"),
        ensure_ascii=False,
        allow_nan=False,
    )
    return text.encode("utf-8")


def _reject_float(text: str) -> Any:
    raise DecodingError(f"floating point literal {text!r}")


def _reject_constant(text: str) -> Any:
    raise DecodingError(f"non-finite literal {text!r}")


def _unique_keys(pairs: list[tuple[str, Any]]) -> dict[str, Any]:
    out: dict[str, Any] = {}
    for key, value in pairs:
        if key in out:
            raise DecodingError(f"duplicate key {key!r}")
        out[key] = value
    return out


def canonical_decode(data: bytes, *, strict: bool = True) -> Any:
    """Parse bytes produced by :func:`canonical_encode`.

    With ``strict`` the input must be byte-identical to the re-encoding of
    the parsed value, so a non-canonical spelling is an error.
    """
    try:
        text = bytes(data).decode("utf-8")
        value = json.loads(
            text,
            parse_float=_reject_float,
            parse_constant=_reject_constant,
            object_pairs_hook=_unique_keys,
        )
    except (UnicodeDecodeError, json.JSONDecodeError, RecursionError) as exc:
        raise DecodingError(str(exc)) from exc
    if strict and canonical_encode(value) != bytes(data):
        raise DecodingError("input is not in canonical form")
    return value


# --------------------------------------------------------------------------
# trust and scope


class TrustLevel(enum.IntEnum):
    UNKNOWN = 0
    KNOWN = 1
    TRUSTED = 2

    @property
    def label(self) -> str:
        return self.name.capitalize()

    @classmethod
    def parse(cls, text: str) -> TrustLevel:
        try:
            return cls[text.upper()]
        except KeyError:
            raise ValueError(f"unknown trust level {text!r}") from None


class AccessScope(enum.IntEnum):
    """Visibility tier enforced by a resource agent; ordered Minimal < Full."""

    MINIMAL = 0
    STANDARD = 1
    FULL = 2

    @property
    def label(self) -> str:
        return self.name.capitalize()

    @classmethod
    def parse(cls, text: str) -> AccessScope:
        try:
            return cls[text.upper()]
        except KeyError:
            raise ValueError(f"unknown access scope {text!r}") from None

    @classmethod
    def for_trust(cls, level: TrustLevel) -> AccessScope:
        return _SCOPE_FOR_TRUST[level]


_SCOPE_FOR_TRUST: Final = {
    TrustLevel.TRUSTED: AccessScope.FULL,
    TrustLevel.KNOWN: AccessScope.STANDARD,
    TrustLevel.UNKNOWN: AccessScope.MINIMAL,
}


# --------------------------------------------------------------------------
# records


def _str_map(value: Any, what: str) -> dict[str, str]:
    if not isinstance(value, Mapping):
        raise ValueError(f"{what} must be a map")
    out = {}
    for k, v in value.items():
        if not isinstance(k, str) or not isinstance(v, str):
            raise ValueError(f"{what} entries must be string to string")
        out[k] = v
    return out


def _opt_int(value: Any, what: str) -> int | None:
    if value is None:
        return None
    if isinstance(value, bool) or not isinstance(value, int):
        raise ValueError(f"{what} must be an integer")
    return value


@dataclass(frozen=True)
class ProductRecord:
    """A product row as stored by a firm, or a redacted view of one.

    ``supplier`` and ``manufacture_date`` are ``None`` only in Minimal-scope
    views; stored records always carry them.
    """

    product: ProductId
    category: str
    supplier: FirmId | None = None
    manufacture_date: int | None = None
    attributes: Mapping[str, str] = field(default_factory=dict)
    commercial: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        check_product_id(self.product)
        if not isinstance(self.category, str):
            raise ValueError("category must be a string")
        if self.supplier is not None:
            check_firm_id(self.supplier)
        if self.manufacture_date is not None and self.manufacture_date < 0:
            raise ValueError("manufacture_date must be >= 0")
        object.__setattr__(self, "attributes", dict(self.attributes))
        object.__setattr__(self, "commercial", dict(self.commercial))

    def to_doc(self) -> dict[str, Any]:
        return {
            "product": self.product,
            "category": self.category,
            "supplier": self.supplier,
            "manufacture_date": self.manufacture_date,
            "attributes": dict(self.attributes),
            "commercial": dict(self.commercial),
        }

    @classmethod
    def from_doc(cls, doc: Mapping[str, Any]) -> ProductRecord:
        if not isinstance(doc, Mapping):
            raise ValueError("product record must be a map")
        extra = set(doc) - _RECORD_KEYS
        if extra:
            raise ValueError(f"unexpected product record keys {sorted(extra)}")
        if "product" not in doc or "category" not in doc:
            raise ValueError("product record needs product and category")
        return cls(
            product=doc["product"],
            category=doc["category"],
            supplier=doc.get("supplier"),
            manufacture_date=_opt_int(doc.get("manufacture_date"), "manufacture_date"),
            attributes=_str_map(doc.get("attributes", {}), "attributes"),
            commercial=_str_map(doc.get("commercial", {}), "commercial"),
        )


_RECORD_KEYS: Final = frozenset(
    {"product", "category", "supplier", "manufacture_date", "attributes", "commercial"}
)


@dataclass(frozen=True)
class CustodyEvent:
    """One firm's receipt (and possibly onward shipment) of a product."""

    product: ProductId
    firm: FirmId
    received_at: int
    received_from: FirmId | None = None
    shipped_to: FirmId | None = None
    shipped_at: int | None = None

    def __post_init__(self) -> None:
        check_product_id(self.product)
        check_firm_id(self.firm)
        for other in (self.received_from, self.shipped_to):
            if other is not None:
                check_firm_id(other)
                if other == self.firm:
                    raise ValueError(f"custody event of {self.product} at {self.firm} links to itself")
        if isinstance(self.received_at, bool) or not isinstance(self.received_at, int) or self.received_at < 0:
            raise ValueError("received_at must be a non-negative integer")
        if self.shipped_at is not None:
            if self.shipped_to is None:
                raise ValueError("shipped_at without shipped_to")
            if self.shipped_at < self.received_at:
                raise ValueError("shipped_at precedes received_at")

    @property
    def is_origin(self) -> bool:
        return self.received_from is None

    @property
    def is_current(self) -> bool:
        return self.shipped_to is None

    def to_doc(self) -> dict[str, Any]:
        return {
            "product": self.product,
            "firm": self.firm,
            "received_from": self.received_from,
            "received_at": self.received_at,
            "shipped_to": self.shipped_to,
            "shipped_at": self.shipped_at,
        }

    @classmethod
    def from_doc(cls, doc: Mapping[str, Any]) -> CustodyEvent:
        if not isinstance(doc, Mapping):
            raise ValueError("custody event must be a map")
        extra = set(doc) - _EVENT_KEYS
        if extra:
            raise ValueError(f"unexpected custody event keys {sorted(extra)}")
        if "product" not in doc or "firm" not in doc or "received_at" not in doc:
            raise ValueError("custody event needs product, firm and received_at")
        return cls(
            product=doc["product"],
            firm=doc["firm"],
            received_at=_opt_int(doc["received_at"], "received_at"),  # type: ignore[arg-type]
            received_from=doc.get("received_from"),
            shipped_to=doc.get("shipped_to"),
            shipped_at=_opt_int(doc.get("shipped_at"), "shipped_at"),
        )


_EVENT_KEYS: Final = frozenset(
    {"product", "firm", "received_from", "received_at", "shipped_to", "shipped_at"}
)


def build_custody_chain(events: Iterable[CustodyEvent]) -> list[CustodyEvent]:
    """Order one product's custody events from origin to current holder.

    A firm may appear at most once per product; a product that comes back to
    a firm it already held is reported as a cycle.

    Raises:
        ChainInconsistent: no origin, several origins, a fork, a cycle, a
            broken link, or events for more than one product.
    """
    events = list(events)
    if not events:
        raise ChainInconsistent("no custody events")
    products = {e.product for e in events}
    if len(products) != 1:
        raise ChainInconsistent(f"events span several products {sorted(products)}")
    (product,) = products

    by_firm: dict[FirmId, CustodyEvent] = {}
    for event in events:
        if event.firm in by_firm:
            raise ChainInconsistent(f"{product}: firm {event.firm} holds it more than once")
        by_firm[event.firm] = event

    origins = [e for e in events if e.received_from is None]
    if not origins:
        raise ChainInconsistent(f"{product}: no origin event")
    if len(origins) > 1:
        names = sorted(e.firm for e in origins)
        raise ChainInconsistent(f"{product}: several origin events at {names}")

    chain = [origins[0]]
    while chain[-1].shipped_to is not None:
        current = chain[-1]
        nxt = by_firm.get(current.shipped_to)
        if nxt is None:
            raise ChainInconsistent(
                f"{product}: {current.firm} shipped to {current.shipped_to}, which has no event"
            )
        if nxt.received_from != current.firm:
            raise ChainInconsistent(
                f"{product}: {nxt.firm} received from {nxt.received_from}, expected {current.firm}"
            )
        if len(chain) == len(events):
            raise ChainInconsistent(f"{product}: custody cycle")
        chain.append(nxt)
    if len(chain) != len(events):
        stray = sorted(set(by_firm) - {e.firm for e in chain})
        raise ChainInconsistent(f"{product}: events at {stray} are not on the chain")
    return chain


# --------------------------------------------------------------------------
# platform configuration and links


@dataclass(frozen=True)
class PlatformConfig:
    """Identity, peer keys, trust table and admission policy of one firm."""

    firm: FirmId
    keys: Mapping[FirmId, bytes] = field(default_factory=dict)
    trust: Mapping[FirmId, TrustLevel] = field(default_factory=dict)
    behavior_whitelist: frozenset[str] = DEFAULT_BEHAVIORS
    ttl_cap: int = MAX_TTL
    retry_backoff_ms: tuple[int, ...] = DEFAULT_BACKOFF_MS
    address: tuple[str, int] | None = None

    def __post_init__(self) -> None:
        check_firm_id(self.firm)
        if self.firm in self.trust:
            raise ValueError(f"{self.firm} lists itself in its trust table")
        for peer, key in self.keys.items():
            check_firm_id(peer)
            if not isinstance(key, bytes) or len(key) != 32:
                raise ValueError(f"{self.firm}: key for {peer} must be 32 bytes")
        if not 0 < self.ttl_cap <= MAX_TTL:
            raise ValueError(f"ttl_cap must be in (0, {MAX_TTL}]")
        if not self.retry_backoff_ms or any(b <= 0 for b in self.retry_backoff_ms):
            raise ValueError("retry_backoff_ms must be non-empty and positive")
        object.__setattr__(self, "keys", dict(self.keys))
        object.__setattr__(self, "trust", dict(self.trust))
        object.__setattr__(self, "behavior_whitelist", frozenset(self.behavior_whitelist))
        object.__setattr__(self, "retry_backoff_ms", tuple(self.retry_backoff_ms))

    def backoff(self, attempt: int) -> int:
        """Delay before retry number ``attempt`` (0-based); the last step repeats."""
        steps = self.retry_backoff_ms
        return steps[min(attempt, len(steps) - 1)]


@dataclass(frozen=True)
class LinkSpec:
    """A bidirectional inter-firm link as declared in a scenario.

    ``schedule`` holds ``(from_ms, up)`` pairs with strictly increasing
    times; the link is up before the first entry and when the list is empty.
    """

    a: FirmId
    b: FirmId
    latency_ms: int
    schedule: tuple[tuple[int, bool], ...] = ()

    def __post_init__(self) -> None:
        check_firm_id(self.a)
        check_firm_id(self.b)
        if self.a == self.b:
            raise ValueError("link endpoints must differ")
        if self.latency_ms < 0:
            raise ValueError("latency_ms must be >= 0")
        times = [t for t, _ in self.schedule]
        if any(t < 0 for t in times) or any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("schedule times must be non-negative and strictly increasing")
        object.__setattr__(self, "schedule", tuple((int(t), bool(u)) for t, u in self.schedule))

    @property
    def key(self) -> frozenset[FirmId]:
        return frozenset((self.a, self.b))

    def is_up(self, now_ms: int) -> bool:
        state = True
        for start, up in self.schedule:
            if start > now_ms:
                break
            state = up
        return state

    def next_up(self, now_ms: int) -> int | None:
        """Earliest instant >= ``now_ms`` at which the link is up."""
        if self.is_up(now_ms):
            return now_ms
        for start, up in self.schedule:
            if start > now_ms and up:
                return start
        return None
