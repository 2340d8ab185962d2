"""Verification harness: centralised oracle, message-exchange baseline, experiments.

The oracle works on plain documents pulled from every firm store and uses
its own matching and redaction code, so it shares no filtering logic with
the agents it is used to check.
"""

from __future__ import annotations

from collections import Counter
from collections.abc import Mapping
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any

from .agent import Collected
from .firmstore import QueryCriteria, Scenario, apply_scope, ingest_scenario
from .interface import Report, Request, SearchRequest, TraceRequest, run_query
from .model import (
    AccessScope,
    CustodyEvent,
    DecodingError,
    FirmId,
    ProductRecord,
    TrustLevel,
    build_custody_chain,
    canonical_decode,
    canonical_encode,
)
from .planner import resolve_targets
from .platform import Undeliverable, assign_scope
from .runtime import Runtime
from .simnet import Delivered
from .wire import Frame, FrameError, MsgType, decode_frame, encode_frame


def _as_scenario(scenario: Scenario | Mapping[str, Any]) -> Scenario:
    return scenario if isinstance(scenario, Scenario) else ingest_scenario(scenario)


# --------------------------------------------------------------------------
# centralised oracle


def _oracle_scope_at(scenario: Scenario, firm: FirmId, home: FirmId) -> AccessScope:
    if firm == home:
        return AccessScope.FULL
    level = scenario.configs[firm].trust.get(home, TrustLevel.UNKNOWN)
    return {
        TrustLevel.TRUSTED: AccessScope.FULL,
        TrustLevel.KNOWN: AccessScope.STANDARD,
        TrustLevel.UNKNOWN: AccessScope.MINIMAL,
    }[level]


def _oracle_redact(doc: dict[str, Any], scope: AccessScope) -> dict[str, Any]:
    out = dict(doc)
    if scope <= AccessScope.STANDARD:
        out["commercial"] = {}
    if scope == AccessScope.MINIMAL:
        out["supplier"] = None
        out["manufacture_date"] = None
        out["attributes"] = {}
    return out


def _oracle_match(doc: dict[str, Any], crit: dict[str, Any]) -> bool:
    if crit["category"] is not None and doc["category"] != crit["category"]:
        return False
    if crit["supplier"] is not None and doc["supplier"] != crit["supplier"]:
        return False
    date = doc["manufacture_date"]
    if crit["made_after"] is not None and (date is None or date < crit["made_after"]):
        return False
    if crit["made_before"] is not None and (date is None or date > crit["made_before"]):
        return False
    if any(doc["attributes"].get(k) != v for k, v in crit["attribute_equals"].items()):
        return False
    if any(doc["commercial"].get(k) != v for k, v in crit["commercial_equals"].items()):
        return False
    return True


@dataclass(frozen=True)
class OracleResult:
    chain: tuple[FirmId, ...] | None = None
    visits: tuple[FirmId, ...] | None = None
    collected_chain: tuple[FirmId, ...] | None = None
    records: frozenset[tuple[FirmId, bytes]] | None = None
    scopes: Mapping[FirmId, AccessScope] = field(default_factory=dict)


ScopeSpec = AccessScope | Mapping[FirmId, AccessScope] | None


def _scope_for(scenario: Scenario, spec: ScopeSpec, firm: FirmId, home: FirmId) -> AccessScope:
    if spec is None:
        return _oracle_scope_at(scenario, firm, home)
    if isinstance(spec, AccessScope):
        return spec
    return spec[firm]


def centralized_oracle(
    scenario: Scenario | Mapping[str, Any], query: Request, scope: ScopeSpec = None
) -> OracleResult:
    """Ground truth for ``query`` from the union of every firm's data.

    ``scope`` is one scope for every firm, a per-firm mapping, or ``None``
    to derive each firm's scope from its trust table the way a supervisor
    would.  For traces, ``chain`` is the complete custody chain and
    ``visits``/``collected_chain`` describe what an agent limited by scope
    and ttl should see.
    """
    scenario = _as_scenario(scenario)
    home = query.home
    if isinstance(query, TraceRequest):
        events = [e for s in scenario.stores.values() for e in s.custody if e.product == query.product]
        full = tuple(e.firm for e in build_custody_chain(events))
        visits: list[FirmId] = []
        collected: list[FirmId] = []
        for firm in reversed(full):
            if len(visits) == query.ttl:
                break
            visits.append(firm)
            if _scope_for(scenario, scope, firm, home) < AccessScope.STANDARD:
                break
            collected.append(firm)
        scopes = {f: _scope_for(scenario, scope, f, home) for f in visits}
        return OracleResult(
            chain=full,
            visits=tuple(visits),
            collected_chain=tuple(reversed(collected)),
            scopes=scopes,
        )

    assert isinstance(query, SearchRequest)
    crit = query.criteria.to_doc()
    holders: dict[FirmId, set[FirmId]] = {}
    for firm, store in scenario.stores.items():
        for record in store.products.values():
            holders.setdefault(record.supplier, set()).add(firm)
    if query.visit is not None:
        targets = list(query.visit)
    elif crit["supplier"] is not None:
        targets = sorted(holders.get(crit["supplier"], set()) - {home})
    else:
        targets = sorted(set(scenario.firms) - {home})
    found: set[tuple[FirmId, bytes]] = set()
    scopes = {}
    for firm in targets:
        sc = _scope_for(scenario, scope, firm, home)
        scopes[firm] = sc
        if crit["commercial_equals"] and sc < AccessScope.FULL:
            continue
        for record in scenario.stores[firm].products.values():
            doc = record.to_doc()
            if not _oracle_match(doc, crit):
                continue
            shown = _oracle_redact(doc, sc)
            if _oracle_match(shown, crit):
                found.add((firm, canonical_encode(shown)))
    return OracleResult(records=frozenset(found), scopes=scopes)


def result_set(report_or_results: Report | Any) -> frozenset[tuple[FirmId, bytes]]:
    """Agent search results in the oracle's (firm, canonical record) form."""
    items = report_or_results.records if isinstance(report_or_results, Report) else report_or_results
    return frozenset(
        (c.firm, canonical_encode(c.item.to_doc())) for c in items if isinstance(c.item, ProductRecord)
    )


def scope_violations(report: Report) -> list[str]:
    """Result fields that exceed the scope granted at their collecting firm."""
    granted: dict[FirmId, AccessScope] = {}
    for hop in report.hops:
        granted[hop.firm] = max(granted.get(hop.firm, AccessScope.MINIMAL), hop.scope_granted)
    problems = []
    for item in report.records:
        scope = granted.get(item.firm)
        if scope is None:
            problems.append(f"{item.identity}: collected at a firm that was never visited")
            continue
        x = item.item
        if isinstance(x, CustodyEvent):
            if scope < AccessScope.STANDARD:
                problems.append(f"{item.identity}: custody data under {scope.label}")
            continue
        if scope < AccessScope.FULL and x.commercial:
            problems.append(f"{item.identity}: commercial fields under {scope.label}")
        if scope < AccessScope.STANDARD and (
            x.supplier is not None or x.manufacture_date is not None or x.attributes
        ):
            problems.append(f"{item.identity}: standard fields under {scope.label}")
    return problems


# --------------------------------------------------------------------------
# message-exchange baseline


class BaselineNode:
    """A firm answering raw table requests, and the querying client at home."""

    def __init__(self, runtime: Runtime, firm: FirmId):
        self.runtime = runtime
        self.firm = firm
        self.config = runtime.scenario.configs[firm]
        self.store = runtime.scenario.stores[firm]
        self.responses: dict[FirmId, dict[str, Any]] = {}
        self.pending: set[FirmId] = set()
        self.completed_at: int | None = None
        self.failures: list[str] = []

    def _send(self, dest: FirmId, msg_type: MsgType, payload: bytes, attempt: int = 0) -> None:
        key = self.config.keys.get(dest)
        if key is None:
            self.failures.append(f"no key shared with {dest}")
            return
        data = encode_frame(Frame(msg_type, self.firm, payload), key)
        result = self.runtime.send(self.firm, dest, data)
        if result is None:
            self.failures.append(f"no link to {dest}")
            return
        if not isinstance(result, Delivered):
            retry_at = self.runtime.now + self.config.backoff(attempt)
            if retry_at > self.runtime.horizon_ms:
                self.failures.append(f"undeliverable to {dest}")
                return
            self.runtime.schedule(retry_at, lambda: self._send(dest, msg_type, payload, attempt + 1), "retry")

    def request(self, targets: list[FirmId], what: str) -> None:
        self.pending = set(targets)
        for firm in targets:
            self._send(firm, MsgType.HELLO, canonical_encode({"fetch": what}))

    def on_frame(self, sender: FirmId, data: bytes) -> None:
        key = self.config.keys.get(sender)
        if key is None:
            return
        try:
            frame = decode_frame(data, key, sender)
            doc = canonical_decode(frame.payload)
        except (FrameError, DecodingError):
            return
        if frame.msg_type is MsgType.HELLO:
            scope = assign_scope(sender, self.config)
            answer: dict[str, Any] = {"firm": self.firm, "scope": scope.label}
            if doc.get("fetch") == "custody":
                if scope < AccessScope.STANDARD:
                    answer["custody"] = []
                    answer["denied"] = True
                else:
                    answer["custody"] = [
                        e.to_doc() for e in sorted(self.store.custody, key=lambda e: (e.product, e.received_at))
                    ]
            else:
                table = [self.store.products[p] for p in sorted(self.store.products)]
                answer["products"] = [apply_scope(r, scope).to_doc() for r in table]
            self._send(sender, MsgType.RESULT, canonical_encode(answer))
        elif frame.msg_type is MsgType.RESULT and sender in self.pending:
            self.pending.discard(sender)
            self.responses[sender] = doc
            if not self.pending:
                self.completed_at = self.runtime.now


@dataclass
class BaselineResult:
    results: tuple[Collected, ...]
    traffic: dict[str, int]
    total_bytes: int
    completed_at: int | None
    failures: list[str]

    @property
    def chain(self) -> tuple[FirmId, ...]:
        events = [c.item for c in self.results if isinstance(c.item, CustodyEvent)]
        if not events:
            return ()
        try:
            return tuple(e.firm for e in build_custody_chain(events))
        except ValueError:
            return tuple(e.firm for e in sorted(events, key=lambda e: e.received_at))


def baseline_fetch(
    scenario: Scenario | Mapping[str, Any], query: Request, *, seed: int = 0
) -> BaselineResult:
    """Ship raw data to the querying firm and filter it there.

    Searches pull the full product table of every resolved target; traces
    pull the full custody log of every other firm, since the holder chain is
    not known in advance.  Frames travel on the same links and counters as
    agent runs.
    """
    scenario = _as_scenario(scenario)
    runtime = Runtime(scenario, seed)
    nodes = {f: BaselineNode(runtime, f) for f in scenario.firms}
    runtime.platforms = nodes  # type: ignore[assignment]
    home = nodes[query.home]
    if isinstance(query, TraceRequest):
        targets = [f for f in scenario.firms if f != query.home]
        what = "custody"
    else:
        targets = resolve_targets(
            query.criteria, scenario.firms, scenario.supplier_index(), home=query.home, visit=query.visit
        )
        targets = [t for t in targets if t != query.home]
        what = "products"
    home.request(targets, what)
    runtime.run()
    if home.pending:
        raise Undeliverable(f"no answer from {sorted(home.pending)}: {home.failures}")

    collected: list[Collected] = []
    if isinstance(query, TraceRequest):
        logs = {f: [CustodyEvent.from_doc(d) for d in r["custody"]] for f, r in home.responses.items()}
        logs[query.home] = list(scenario.stores[query.home].custody)
        for firm in sorted(logs):
            collected.extend(Collected(firm, e) for e in logs[firm] if e.product == query.product)
    else:
        crit: QueryCriteria = query.criteria
        for firm in sorted(home.responses):
            for doc in home.responses[firm]["products"]:
                record = ProductRecord.from_doc(doc)
                if crit.matches(record):
                    collected.append(Collected(firm, record))
    return BaselineResult(
        results=tuple(collected),
        traffic=runtime.traffic(),
        total_bytes=runtime.total_bytes(),
        completed_at=home.completed_at,
        failures=list(home.failures),
    )


# --------------------------------------------------------------------------
# traffic comparison


@dataclass(frozen=True)
class TrafficReport:
    query: Mapping[str, Any]
    agent_per_link: Mapping[str, int]
    baseline_per_link: Mapping[str, int]
    hops: int
    agent_completed_at: int | None = None
    baseline_completed_at: int | None = None

    @property
    def agent_total(self) -> int:
        return sum(self.agent_per_link.values())

    @property
    def baseline_total(self) -> int:
        return sum(self.baseline_per_link.values())

    @property
    def ratio(self) -> Fraction | None:
        if self.baseline_total == 0:
            return None
        return Fraction(self.agent_total, self.baseline_total)

    def to_doc(self) -> dict[str, Any]:
        ratio = self.ratio
        return {
            "query": dict(self.query),
            "agent_bytes": {"per_link": dict(self.agent_per_link), "total": self.agent_total},
            "baseline_bytes": {"per_link": dict(self.baseline_per_link), "total": self.baseline_total},
            "ratio": None if ratio is None else f"{ratio.numerator}/{ratio.denominator}",
            "hops": self.hops,
            "agent_completed_at": self.agent_completed_at,
            "baseline_completed_at": self.baseline_completed_at,
        }

    def render(self) -> bytes:
        return canonical_encode(self.to_doc())


def run_comparison(
    scenario: Scenario | Mapping[str, Any], query: Request, *, seed: int = 0
) -> tuple[TrafficReport, Report, BaselineResult]:
    """Run the agent and the baseline on separate, identical networks."""
    scenario = _as_scenario(scenario)
    runtime = Runtime(scenario, seed)
    _, report = run_query(query, runtime)
    baseline = baseline_fetch(scenario, query, seed=seed)
    traffic = TrafficReport(
        query=query.to_doc(),
        agent_per_link=runtime.traffic(),
        baseline_per_link=baseline.traffic,
        hops=len(report.hops),
        agent_completed_at=report.completed_at,
        baseline_completed_at=baseline.completed_at,
    )
    return traffic, report, baseline


# --------------------------------------------------------------------------
# intermittency


@dataclass
class CompletionLog:
    report: Report
    completed: bool
    completed_at: int | None
    retries: int
    deliveries: list[dict[str, Any]]
    admissions: Counter
    replay_rejections: int
    events: list[dict[str, Any]]

    @property
    def exactly_once(self) -> bool:
        return all(n == 1 for n in self.admissions.values())


def run_intermittency(
    scenario: Scenario | Mapping[str, Any],
    query: Request,
    *,
    seed: int = 0,
    duplicate_transfers: set[int] | frozenset[int] = frozenset(),
) -> CompletionLog:
    """Run ``query`` over links with down windows, optionally duplicating frames.

    Raises:
        Undeliverable: the query did not complete within the horizon.
    """
    scenario = _as_scenario(scenario)
    runtime = Runtime(scenario, seed)
    runtime.duplicate_transfers = set(duplicate_transfers)
    _, report = run_query(query, runtime)
    events = runtime.events
    admissions = Counter(
        (e["firm"], e["agent"], e["hop"]) for e in events if e["event"] == "admitted"
    )
    homecomings = [e["t"] for e in events if e["event"] == "homecoming"]
    retries = sum(1 for e in events if e["event"] in ("sent", "link_down") and e["attempt"] > 0)
    log = CompletionLog(
        report=report,
        completed=report.status == "Completed",
        completed_at=homecomings[-1] if homecomings else None,
        retries=retries,
        deliveries=[e for e in events if e["event"] == "admitted"],
        admissions=admissions,
        replay_rejections=sum(
            1 for e in events if e["event"] == "rejected" and e["code"] == "Replay"
        ),
        events=events,
    )
    if not log.completed:
        raise Undeliverable(report.failure or "query did not complete")
    return log
