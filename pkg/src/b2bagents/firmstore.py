"""Per-firm product databases and the resource-agent access layer.

A firm's product table holds the records of products it currently has in
stock; its custody log holds every custody event the firm ever recorded.
Visiting agents never touch a :class:`FirmStore` directly, they go through
a :class:`ResourceAgent`, which applies the caller's access scope.
"""

from __future__ import annotations

import json
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

from .model import (
    AccessScope,
    ChainInconsistent,
    CustodyEvent,
    FirmId,
    LinkSpec,
    PlatformConfig,
    ProductId,
    ProductRecord,
    TrustLevel,
    build_custody_chain,
    check_firm_id,
)


class ScopeDenied(PermissionError):
    """The caller's access scope does not permit the request."""


class NotHeld(LookupError):
    """The firm has no custody event for the product."""


class ScenarioInvalid(ValueError):
    def __init__(self, message: str, *, product: str | None = None, firm: str | None = None):
        super().__init__(message)
        self.product = product
        self.firm = firm


@dataclass(frozen=True)
class QueryCriteria:
    """Conjunctive search criteria; absent fields match everything.

    Date bounds are inclusive on both ends.
    """

    category: str | None = None
    supplier: FirmId | None = None
    made_after: int | None = None
    made_before: int | None = None
    attribute_equals: Mapping[str, str] = field(default_factory=dict)
    commercial_equals: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.supplier is not None:
            check_firm_id(self.supplier)
        for bound in (self.made_after, self.made_before):
            if bound is not None and (isinstance(bound, bool) or not isinstance(bound, int)):
                raise ValueError("date bounds must be integers")
        if (
            self.made_after is not None
            and self.made_before is not None
            and self.made_after > self.made_before
        ):
            raise ValueError("made_after is later than made_before")
        object.__setattr__(self, "attribute_equals", dict(self.attribute_equals))
        object.__setattr__(self, "commercial_equals", dict(self.commercial_equals))

    @property
    def touches_commercial(self) -> bool:
        return bool(self.commercial_equals)

    def matches(self, record: ProductRecord) -> bool:
        """True when ``record`` shows every criterion; hidden fields never match."""
        if self.category is not None and record.category != self.category:
            return False
        if self.supplier is not None and record.supplier != self.supplier:
            return False
        if self.made_after is not None or self.made_before is not None:
            date = record.manufacture_date
            if date is None:
                return False
            if self.made_after is not None and date < self.made_after:
                return False
            if self.made_before is not None and date > self.made_before:
                return False
        for key, value in self.attribute_equals.items():
            if record.attributes.get(key) != value:
                return False
        for key, value in self.commercial_equals.items():
            if record.commercial.get(key) != value:
                return False
        return True

    def to_doc(self) -> dict[str, Any]:
        return {
            "category": self.category,
            "supplier": self.supplier,
            "made_after": self.made_after,
            "made_before": self.made_before,
            "attribute_equals": dict(self.attribute_equals),
            "commercial_equals": dict(self.commercial_equals),
        }

    @classmethod
    def from_doc(cls, doc: Mapping[str, Any]) -> QueryCriteria:
        if not isinstance(doc, Mapping):
            raise ValueError("criteria must be a map")
        extra = set(doc) - _CRITERIA_KEYS
        if extra:
            raise ValueError(f"unexpected criteria keys {sorted(extra)}")
        for name in ("attribute_equals", "commercial_equals"):
            m = doc.get(name, {})
            if not isinstance(m, Mapping) or not all(
                isinstance(k, str) and isinstance(v, str) for k, v in m.items()
            ):
                raise ValueError(f"{name} must map strings to strings")
        category = doc.get("category")
        if category is not None and not isinstance(category, str):
            raise ValueError("category must be a string")
        return cls(
            category=category,
            supplier=doc.get("supplier"),
            made_after=doc.get("made_after"),
            made_before=doc.get("made_before"),
            attribute_equals=doc.get("attribute_equals", {}),
            commercial_equals=doc.get("commercial_equals", {}),
        )


_CRITERIA_KEYS = frozenset(
    {"category", "supplier", "made_after", "made_before", "attribute_equals", "commercial_equals"}
)


def apply_scope(record: ProductRecord, scope: AccessScope) -> ProductRecord:
    if scope is AccessScope.FULL:
        return record
    if scope is AccessScope.STANDARD:
        return replace(record, commercial={})
    return ProductRecord(product=record.product, category=record.category)


@dataclass(frozen=True)
class FirmStore:
    firm: FirmId
    products: Mapping[ProductId, ProductRecord]
    custody: tuple[CustodyEvent, ...] = ()

    def __post_init__(self) -> None:
        for event in self.custody:
            if event.firm != self.firm:
                raise ValueError(f"custody event for {event.firm} in store of {self.firm}")
        for pid, record in self.products.items():
            if record.product != pid:
                raise ValueError(f"product table key {pid} holds record {record.product}")
        object.__setattr__(self, "products", dict(self.products))
        object.__setattr__(self, "custody", tuple(self.custody))


def query_products(
    store: FirmStore, criteria: QueryCriteria, scope: AccessScope
) -> list[ProductRecord]:
    """Records of ``store`` matching ``criteria``, redacted to ``scope``.

    Matching is evaluated on the stored record; the result is ordered by
    ascending product id.  Commercial criteria need Full scope, since any
    narrower scope hides the commercial map.
    """
    if criteria.touches_commercial and scope < AccessScope.FULL:
        raise ScopeDenied(f"commercial criteria need Full scope, granted {scope.label}")
    return [
        apply_scope(store.products[pid], scope)
        for pid in sorted(store.products)
        if criteria.matches(store.products[pid])
    ]


def custody_lookup(
    store: FirmStore, product: ProductId, scope: AccessScope
) -> tuple[list[CustodyEvent], FirmId | None]:
    """This firm's custody events for ``product`` and the firm it came from.

    Raises:
        ScopeDenied: under Minimal scope; custody needs at least Standard.
        NotHeld: the firm never held the product.
    """
    if scope < AccessScope.STANDARD:
        raise ScopeDenied("custody data needs Standard scope")
    events = sorted(
        (e for e in store.custody if e.product == product), key=lambda e: e.received_at
    )
    if not events:
        raise NotHeld(f"{store.firm} never held {product}")
    return events, events[0].received_from


class ResourceAgent:
    """Mediates every read a visiting agent makes against one firm's store."""

    def __init__(self, store: FirmStore):
        self.store = store
        self.reads = 0

    @property
    def firm(self) -> FirmId:
        return self.store.firm

    def query(self, criteria: QueryCriteria, scope: AccessScope) -> list[ProductRecord]:
        self.reads += 1
        return query_products(self.store, criteria, scope)

    def custody(
        self, product: ProductId, scope: AccessScope
    ) -> tuple[list[CustodyEvent], FirmId | None]:
        self.reads += 1
        return custody_lookup(self.store, product, scope)

    def full_table(self, scope: AccessScope) -> list[ProductRecord]:
        self.reads += 1
        return [apply_scope(self.store.products[p], scope) for p in sorted(self.store.products)]

    def full_custody(self, scope: AccessScope) -> list[CustodyEvent]:
        self.reads += 1
        if scope < AccessScope.STANDARD:
            raise ScopeDenied("custody data needs Standard scope")
        return sorted(self.store.custody, key=lambda e: (e.product, e.received_at))


# --------------------------------------------------------------------------
# scenarios


@dataclass
class Scenario:
    """A validated scenario: firm stores, platform configs, links, directory."""

    firms: list[FirmId]
    stores: dict[FirmId, FirmStore]
    directory: dict[ProductId, FirmId]
    products: dict[ProductId, ProductRecord]
    custody: dict[ProductId, list[CustodyEvent]]
    configs: dict[FirmId, PlatformConfig]
    links: list[LinkSpec]
    horizon_ms: int = 3_600_000

    def link(self, a: FirmId, b: FirmId) -> LinkSpec | None:
        key = frozenset((a, b))
        for link in self.links:
            if link.key == key:
                return link
        return None

    def supplier_index(self) -> dict[FirmId, set[FirmId]]:
        """Supplier -> firms currently holding goods from that supplier."""
        index: dict[FirmId, set[FirmId]] = {}
        for pid, holder in self.directory.items():
            supplier = self.products[pid].supplier
            if supplier is not None:
                index.setdefault(supplier, set()).add(holder)
        return index

    def chain(self, product: ProductId) -> list[CustodyEvent]:
        return list(self.custody[product])


def _need(doc: Mapping[str, Any], key: str, where: str) -> Any:
    if key not in doc:
        raise ScenarioInvalid(f"{where}: missing {key!r}")
    return doc[key]


def _parse_key(hex_text: Any, firm: str, peer: str) -> bytes:
    try:
        key = bytes.fromhex(hex_text)
    except (TypeError, ValueError):
        key = b""
    if len(key) != 32:
        raise ScenarioInvalid(f"{firm}: key for {peer} must be 64 hex digits", firm=firm)
    return key


def _parse_address(value: Any, firm: str) -> tuple[str, int] | None:
    if value is None:
        return None
    if not isinstance(value, str) or ":" not in value:
        raise ScenarioInvalid(f"{firm}: address must be host:port", firm=firm)
    host, _, port = value.rpartition(":")
    if not port.isdigit() or not 0 <= int(port) < 65536:
        raise ScenarioInvalid(f"{firm}: bad port in {value!r}", firm=firm)
    return host, int(port)


def _parse_firm(doc: Any) -> PlatformConfig:
    if not isinstance(doc, Mapping):
        raise ScenarioInvalid("firm entries must be maps")
    firm = _need(doc, "id", "firm")
    try:
        check_firm_id(firm)
    except ValueError as exc:
        raise ScenarioInvalid(str(exc), firm=str(firm)) from None
    keys = {peer: _parse_key(h, firm, peer) for peer, h in dict(doc.get("keys", {})).items()}
    try:
        trust = {peer: TrustLevel.parse(lvl) for peer, lvl in dict(doc.get("trust", {})).items()}
        options: dict[str, Any] = {}
        if "behavior_whitelist" in doc:
            options["behavior_whitelist"] = frozenset(doc["behavior_whitelist"])
        if "ttl_cap" in doc:
            options["ttl_cap"] = int(doc["ttl_cap"])
        if "retry_backoff_ms" in doc:
            options["retry_backoff_ms"] = tuple(int(x) for x in doc["retry_backoff_ms"])
        return PlatformConfig(
            firm=firm,
            keys=keys,
            trust=trust,
            address=_parse_address(doc.get("addr"), firm),
            **options,
        )
    except (TypeError, ValueError) as exc:
        raise ScenarioInvalid(f"{firm}: {exc}", firm=firm) from None


def _parse_link(doc: Any) -> LinkSpec:
    if not isinstance(doc, Mapping):
        raise ScenarioInvalid("link entries must be maps")
    schedule = []
    for entry in doc.get("schedule", []):
        if isinstance(entry, Mapping):
            schedule.append((entry.get("from_ms"), entry.get("up")))
        else:
            schedule.append(tuple(entry))
    try:
        for t, up in schedule:
            if isinstance(t, bool) or not isinstance(t, int) or not isinstance(up, bool):
                raise ValueError("schedule entries are (from_ms: int, up: bool)")
        latency = _need(doc, "latency_ms", "link")
        if isinstance(latency, bool) or not isinstance(latency, int):
            raise ValueError("latency_ms must be an integer")
        return LinkSpec(
            a=_need(doc, "a", "link"),
            b=_need(doc, "b", "link"),
            latency_ms=latency,
            schedule=tuple(schedule),
        )
    except ValueError as exc:
        raise ScenarioInvalid(f"link {doc.get('a')}-{doc.get('b')}: {exc}") from None


def ingest_scenario(document: Mapping[str, Any] | str | bytes) -> Scenario:
    """Validate a scenario document and build every firm's store.

    Raises:
        ScenarioInvalid: duplicate ids, unknown firm or product references,
            asymmetric keys, malformed links, or an inconsistent chain.
    """
    if isinstance(document, (str, bytes)):
        try:
            document = json.loads(document)
        except json.JSONDecodeError as exc:
            raise ScenarioInvalid(f"scenario is not valid JSON: {exc}") from None
    if not isinstance(document, Mapping):
        raise ScenarioInvalid("scenario must be a map")

    configs: dict[FirmId, PlatformConfig] = {}
    for firm_doc in document.get("firms", []):
        config = _parse_firm(firm_doc)
        if config.firm in configs:
            raise ScenarioInvalid(f"duplicate firm {config.firm}", firm=config.firm)
        configs[config.firm] = config
    firms = list(configs)

    for config in configs.values():
        for peer in list(config.keys) + list(config.trust):
            if peer not in configs:
                raise ScenarioInvalid(f"{config.firm} references unknown firm {peer}", firm=peer)
        for peer, key in config.keys.items():
            back = configs[peer].keys.get(config.firm)
            if back is not None and back != key:
                raise ScenarioInvalid(
                    f"keys between {config.firm} and {peer} disagree", firm=config.firm
                )
    # a key declared on one side only is shared by both
    for config in list(configs.values()):
        for peer, key in config.keys.items():
            if config.firm not in configs[peer].keys:
                merged = dict(configs[peer].keys)
                merged[config.firm] = key
                configs[peer] = replace(configs[peer], keys=merged)

    links: list[LinkSpec] = []
    seen_links: set[frozenset[str]] = set()
    for link_doc in document.get("links", []):
        link = _parse_link(link_doc)
        for end in (link.a, link.b):
            if end not in configs:
                raise ScenarioInvalid(f"link references unknown firm {end}", firm=end)
        if link.key in seen_links:
            raise ScenarioInvalid(f"duplicate link {link.a}-{link.b}", firm=link.a)
        seen_links.add(link.key)
        links.append(link)

    products: dict[ProductId, ProductRecord] = {}
    for prod_doc in document.get("products", []):
        if not isinstance(prod_doc, Mapping):
            raise ScenarioInvalid("product entries must be maps")
        prod_doc = dict(prod_doc)
        if "id" in prod_doc and "product" not in prod_doc:
            prod_doc["product"] = prod_doc.pop("id")
        pid = prod_doc.get("product")
        try:
            record = ProductRecord.from_doc(prod_doc)
        except (TypeError, ValueError) as exc:
            raise ScenarioInvalid(f"product {pid}: {exc}", product=pid) from None
        if record.product in products:
            raise ScenarioInvalid(f"duplicate product {record.product}", product=record.product)
        if record.supplier is None or record.manufacture_date is None:
            raise ScenarioInvalid(
                f"product {record.product} needs supplier and manufacture_date",
                product=record.product,
            )
        if record.supplier not in configs:
            raise ScenarioInvalid(
                f"product {record.product} supplied by unknown firm {record.supplier}",
                product=record.product,
                firm=record.supplier,
            )
        products[record.product] = record

    events: dict[ProductId, list[CustodyEvent]] = {pid: [] for pid in products}
    for ev_doc in document.get("custody", []):
        try:
            event = CustodyEvent.from_doc(ev_doc)
        except (TypeError, ValueError) as exc:
            raise ScenarioInvalid(f"custody event: {exc}") from None
        if event.product not in products:
            raise ScenarioInvalid(
                f"custody event for unknown product {event.product}", product=event.product
            )
        for ref in (event.firm, event.received_from, event.shipped_to):
            if ref is not None and ref not in configs:
                raise ScenarioInvalid(
                    f"custody of {event.product} references unknown firm {ref}",
                    product=event.product,
                    firm=ref,
                )
        events[event.product].append(event)

    chains: dict[ProductId, list[CustodyEvent]] = {}
    directory: dict[ProductId, FirmId] = {}
    for pid, evs in events.items():
        try:
            chain = build_custody_chain(evs)
        except ChainInconsistent as exc:
            raise ScenarioInvalid(str(exc), product=pid) from None
        chains[pid] = chain
        directory[pid] = chain[-1].firm

    held: dict[FirmId, dict[ProductId, ProductRecord]] = {f: {} for f in firms}
    logs: dict[FirmId, list[CustodyEvent]] = {f: [] for f in firms}
    for pid in sorted(products):
        held[directory[pid]][pid] = products[pid]
        for event in chains[pid]:
            logs[event.firm].append(event)
    stores = {f: FirmStore(firm=f, products=held[f], custody=tuple(logs[f])) for f in firms}

    horizon = document.get("horizon_ms", 3_600_000)
    if isinstance(horizon, bool) or not isinstance(horizon, int) or horizon <= 0:
        raise ScenarioInvalid("horizon_ms must be a positive integer")
    return Scenario(
        firms=firms,
        stores=stores,
        directory=directory,
        products=products,
        custody=chains,
        configs=configs,
        links=links,
        horizon_ms=horizon,
    )


def load_scenario(path: str | Path) -> Scenario:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ScenarioInvalid(f"cannot read scenario {path}: {exc}") from None
    return ingest_scenario(text)


def scenario_to_doc(scenario: Scenario) -> dict[str, Any]:
    """Serialise a scenario back into the file format."""
    firms = []
    for firm in scenario.firms:
        cfg = scenario.configs[firm]
        doc: dict[str, Any] = {
            "id": firm,
            "keys": {p: k.hex() for p, k in sorted(cfg.keys.items())},
            "trust": {p: t.label for p, t in sorted(cfg.trust.items())},
            "behavior_whitelist": sorted(cfg.behavior_whitelist),
            "ttl_cap": cfg.ttl_cap,
            "retry_backoff_ms": list(cfg.retry_backoff_ms),
        }
        if cfg.address is not None:
            doc["addr"] = f"{cfg.address[0]}:{cfg.address[1]}"
        firms.append(doc)
    return {
        "firms": firms,
        "links": [
            {
                "a": link.a,
                "b": link.b,
                "latency_ms": link.latency_ms,
                "schedule": [{"from_ms": t, "up": u} for t, u in link.schedule],
            }
            for link in scenario.links
        ],
        "products": [_product_file_doc(scenario.products[p]) for p in sorted(scenario.products)],
        "custody": [e.to_doc() for p in sorted(scenario.custody) for e in scenario.custody[p]],
        "horizon_ms": scenario.horizon_ms,
    }


def _product_file_doc(record: ProductRecord) -> dict[str, Any]:
    doc = record.to_doc()
    doc["id"] = doc.pop("product")
    return doc


def merged_events(stores: Iterable[FirmStore]) -> dict[ProductId, list[CustodyEvent]]:
    out: dict[ProductId, list[CustodyEvent]] = {}
    for store in stores:
        for event in store.custody:
            out.setdefault(event.product, []).append(event)
    return out
