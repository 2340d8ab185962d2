"""The interface agent: launches agents for users and assembles their reports."""

from __future__ import annotations

import enum
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from typing import Any, Union

from .agent import (
    AgentCapsule,
    BadConfig,
    Collected,
    HopEntry,
    Itinerary,
    SearchGoal,
    TraceGoal,
    new_agent,
)
from .firmstore import QueryCriteria
from .model import MAX_TTL, CustodyEvent, FirmId, ProductId, canonical_encode
from .planner import CostGraph, plan_route, resolve_targets

DEFAULT_TTL = 16


class BadRequest(ValueError):
    pass


@dataclass(frozen=True)
class TraceRequest:
    product: ProductId
    home: FirmId
    ttl: int = DEFAULT_TTL
    partial: bool = False

    def to_doc(self) -> dict[str, Any]:
        return {"kind": "trace", "product": self.product, "home": self.home, "ttl": self.ttl}


@dataclass(frozen=True)
class SearchRequest:
    home: FirmId
    criteria: QueryCriteria = field(default_factory=QueryCriteria)
    visit: tuple[FirmId, ...] | None = None
    ttl: int | None = None
    partial: bool = False

    def to_doc(self) -> dict[str, Any]:
        return {
            "kind": "search",
            "home": self.home,
            "criteria": self.criteria.to_doc(),
            "visit": None if self.visit is None else list(self.visit),
            "ttl": self.ttl,
        }


Request = Union[TraceRequest, SearchRequest]


def request_from_doc(doc: Mapping[str, Any]) -> Request:
    """Parse a query document (the ``bench compare --query`` file format)."""
    if not isinstance(doc, Mapping):
        raise BadRequest("query must be a map")
    try:
        kind = doc.get("kind")
        if kind == "trace":
            return TraceRequest(
                product=doc["product"], home=doc["home"], ttl=int(doc.get("ttl", DEFAULT_TTL))
            )
        if kind == "search":
            visit = doc.get("visit")
            ttl = doc.get("ttl")
            return SearchRequest(
                home=doc["home"],
                criteria=QueryCriteria.from_doc(doc.get("criteria", {})),
                visit=None if visit is None else tuple(visit),
                ttl=None if ttl is None else int(ttl),
            )
    except (KeyError, TypeError, ValueError) as exc:
        raise BadRequest(f"malformed query: {exc}") from None
    raise BadRequest(f"unknown query kind {doc.get('kind')!r}")


class TicketStatus(enum.Enum):
    IN_FLIGHT = "InFlight"
    COMPLETED = "Completed"
    FAILED = "Failed"


@dataclass
class QueryTicket:
    ticket_id: str
    agent_id: bytes
    submitted_at: int
    request: Request
    status: TicketStatus = TicketStatus.IN_FLIGHT
    reason: str | None = None
    completed_at: int | None = None

    def complete(self, now: int) -> None:
        if self.status is not TicketStatus.IN_FLIGHT:
            raise RuntimeError(f"ticket {self.ticket_id} is already {self.status.value}")
        self.status = TicketStatus.COMPLETED
        self.completed_at = now

    def fail(self, reason: str, now: int) -> None:
        if self.status is not TicketStatus.IN_FLIGHT:
            raise RuntimeError(f"ticket {self.ticket_id} is already {self.status.value}")
        self.status = TicketStatus.FAILED
        self.reason = reason
        self.completed_at = now


# --------------------------------------------------------------------------
# reports


@dataclass(frozen=True)
class Report:
    query: Mapping[str, Any]
    records: tuple[Collected, ...] = ()
    hops: tuple[HopEntry, ...] = ()
    chain: tuple[FirmId, ...] | None = None
    chain_complete: bool | None = None
    status: str = "Completed"
    failure: str | None = None
    partial: bool = False
    traffic: Mapping[str, int] | None = None
    completed_at: int | None = None

    def sections(self) -> dict[FirmId, dict[str, Any]]:
        out: dict[FirmId, dict[str, Any]] = {}
        for hop in self.hops:
            sec = out.setdefault(hop.firm, {"visits": [], "products": []})
            sec["visits"].append({"outcome": hop.outcome.value, "scope": hop.scope_granted.label})
        for item in self.records:
            sec = out.setdefault(item.firm, {"visits": [], "products": []})
            sec["products"].append(item.product)
        return {f: out[f] for f in sorted(out)}

    def to_doc(self) -> dict[str, Any]:
        doc: dict[str, Any] = {
            "query": dict(self.query),
            "status": self.status,
            "failure": self.failure,
            "partial": self.partial,
            "sections": self.sections(),
            "records": [r.to_doc() for r in self.records],
            "hops": [h.to_doc() for h in self.hops],
            "traffic": None if self.traffic is None else dict(self.traffic),
            "completed_at": self.completed_at,
        }
        if self.chain is not None:
            doc["chain"] = list(self.chain)
            doc["chain_complete"] = self.chain_complete
        return doc


def _link_custody(events: Sequence[CustodyEvent]) -> tuple[list[FirmId], bool]:
    """Order collected custody events origin-first, tolerating a missing prefix."""
    if not events:
        return [], False
    by_firm = {e.firm: e for e in events}
    starts = [e for e in events if e.received_from not in by_firm]
    if len(starts) == 1 and len(by_firm) == len(events):
        order = [starts[0]]
        while order[-1].shipped_to in by_firm and len(order) <= len(events):
            order.append(by_firm[order[-1].shipped_to])
        if len(order) == len(events):
            return [e.firm for e in order], order[0].received_from is None
    ordered = sorted(events, key=lambda e: (e.received_at, e.firm))
    return [e.firm for e in ordered], False


def aggregate(
    query: Request | Mapping[str, Any],
    results: Iterable[Collected],
    hops: Iterable[HopEntry] = (),
    *,
    partial: bool = False,
    traffic: Mapping[str, int] | None = None,
    status: str = "Completed",
    failure: str | None = None,
    completed_at: int | None = None,
) -> Report:
    """Deduplicate and order collected results into a report.

    Records are identified by (product, collecting firm, kind).  The output
    does not depend on the order or multiplicity of ``results``.
    """
    echo = query.to_doc() if hasattr(query, "to_doc") else dict(query)
    unique: dict[tuple[str, str, str], Collected] = {}
    for item in results:
        prev = unique.get(item.identity)
        if prev is None or canonical_encode(item.to_doc()) < canonical_encode(prev.to_doc()):
            unique[item.identity] = item
    records = tuple(unique[k] for k in sorted(unique))
    chain = chain_complete = None
    if echo.get("kind") == "trace":
        custody = [r.item for r in records if isinstance(r.item, CustodyEvent)]
        order, chain_complete = _link_custody(custody)
        chain = tuple(order)
    return Report(
        query=echo,
        records=records,
        hops=tuple(hops),
        chain=chain,
        chain_complete=chain_complete,
        status=status,
        failure=failure,
        partial=partial,
        traffic=None if traffic is None else dict(sorted(traffic.items())),
        completed_at=completed_at,
    )


def _describe(item: Collected) -> str:
    x = item.item
    if isinstance(x, CustodyEvent):
        src = x.received_from or "-"
        dst = x.shipped_to or "-"
        shipped = "-" if x.shipped_at is None else str(x.shipped_at)
        return f"from {src} at {x.received_at}, to {dst} at {shipped}"
    parts = [x.category]
    if x.supplier is not None:
        parts.append(f"supplier {x.supplier}")
    if x.manufacture_date is not None:
        parts.append(f"made {x.manufacture_date}")
    parts.extend(f"{k}={v}" for k, v in sorted(x.attributes.items()))
    parts.extend(f"{k}={v}" for k, v in sorted(x.commercial.items()))
    return ", ".join(parts)


def _describe_query(q: Mapping[str, Any]) -> str:
    if q.get("kind") == "trace":
        return f"trace {q.get('product')} from {q.get('home')} (ttl {q.get('ttl')})"
    if q.get("kind") == "search":
        crit = {k: v for k, v in (q.get("criteria") or {}).items() if v not in (None, {})}
        flat = []
        for k, v in sorted(crit.items()):
            if isinstance(v, Mapping):
                flat.extend(f"{k}.{sk}={sv}" for sk, sv in sorted(v.items()))
            else:
                flat.append(f"{k}={v}")
        terms = " ".join(flat) or "(all)"
        visit = q.get("visit")
        where = f" visiting {','.join(visit)}" if visit else ""
        return f"search {terms} from {q.get('home')}{where}"
    return "query " + canonical_encode(dict(q)).decode()


def render(report: Report, fmt: str = "text") -> bytes:
    """Render as a stable text table or as canonical structured bytes."""
    if fmt == "structured":
        return canonical_encode(report.to_doc())
    if fmt != "text":
        raise ValueError(f"unknown format {fmt!r}")
    lines = [f"query:  {_describe_query(report.query)}"]
    status = report.status + (f" ({report.failure})" if report.failure else "")
    if report.partial:
        status += " [interim]"
    lines.append(f"status: {status}")
    if report.chain is not None:
        chain = " -> ".join(report.chain) if report.chain else "(empty)"
        suffix = "" if report.chain_complete else "  (incomplete)"
        lines.append(f"chain:  {chain}{suffix}")
    if report.hops:
        lines.append("hops:")
        lines.append(f"  {'#':>3}  {'firm':<16}  {'arrived_ms':>10}  {'scope':<8}  outcome")
        for i, hop in enumerate(report.hops, 1):
            lines.append(
                f"  {i:>3}  {hop.firm:<16}  {hop.arrived_at:>10}  "
                f"{hop.scope_granted.label:<8}  {hop.outcome.value}"
            )
    lines.append(f"results ({len(report.records)}):")
    for item in report.records:
        lines.append(f"  {item.product:<12}  {item.firm:<16}  {item.kind:<7}  {_describe(item)}")
    if report.traffic is not None:
        total = sum(report.traffic.values())
        lines.append(f"traffic: {total} bytes")
        for name, count in report.traffic.items():
            if count:
                lines.append(f"  {name:<34} {count:>10}")
    return ("\n".join(lines) + "\n").encode("utf-8")


# --------------------------------------------------------------------------
# the interface agent


class InterfaceAgent:
    """Per-home-platform front end: ticket bookkeeping and report assembly."""

    def __init__(self, runtime: Any, firm: FirmId):
        self.runtime = runtime
        self.firm = firm
        self.tickets: dict[str, QueryTicket] = {}
        self.capsules: dict[str, AgentCapsule] = {}
        self.interim: dict[str, list[Report]] = {}
        self._by_agent: dict[bytes, str] = {}
        self._traffic_at_submit: dict[str, dict[str, int]] = {}
        self._traffic_at_end: dict[str, dict[str, int]] = {}
        runtime.platforms[firm].interface = self
        runtime.hop_listeners.append(self._on_hop)

    @classmethod
    def for_firm(cls, runtime: Any, firm: FirmId) -> InterfaceAgent:
        platform = runtime.platforms[firm]
        if isinstance(platform.interface, InterfaceAgent):
            return platform.interface
        return cls(runtime, firm)

    def register(self, ticket: QueryTicket) -> None:
        self.tickets[ticket.ticket_id] = ticket
        self._by_agent[ticket.agent_id] = ticket.ticket_id
        self._traffic_at_submit[ticket.ticket_id] = self.runtime.traffic()
        if ticket.request.partial:
            self.interim[ticket.ticket_id] = []

    def _finish_traffic(self, tid: str) -> None:
        self._traffic_at_end[tid] = self.runtime.traffic()

    def on_homecoming(self, capsule: AgentCapsule) -> None:
        tid = self._by_agent.get(capsule.agent_id)
        if tid is None or self.tickets[tid].status is not TicketStatus.IN_FLIGHT:
            return
        self.capsules[tid] = capsule
        self.tickets[tid].complete(self.runtime.now)
        self._finish_traffic(tid)

    def on_failure(self, agent_id: bytes, reason: str) -> None:
        tid = self._by_agent.get(agent_id)
        if tid is None or self.tickets[tid].status is not TicketStatus.IN_FLIGHT:
            return
        self.tickets[tid].fail(reason, self.runtime.now)
        self._finish_traffic(tid)

    def _on_hop(self, firm: FirmId, capsule: AgentCapsule) -> None:
        tid = self._by_agent.get(capsule.agent_id)
        if tid is None or tid not in self.interim:
            return
        ticket = self.tickets[tid]
        self.interim[tid].append(
            aggregate(ticket.request, capsule.results, capsule.hops, partial=True, status="InFlight")
        )

    def traffic_of(self, tid: str) -> dict[str, int]:
        start = self._traffic_at_submit[tid]
        end = self._traffic_at_end.get(tid) or self.runtime.traffic()
        return {k: end.get(k, 0) - start.get(k, 0) for k in sorted(end)}

    def report(self, ticket: QueryTicket | str) -> Report:
        tid = ticket if isinstance(ticket, str) else ticket.ticket_id
        t = self.tickets[tid]
        capsule = self.capsules.get(tid)
        results = capsule.results if capsule is not None else ()
        hops = capsule.hops if capsule is not None else ()
        return aggregate(
            t.request,
            results,
            hops,
            traffic=self.traffic_of(tid),
            status=t.status.value,
            failure=t.reason,
            completed_at=t.completed_at,
        )

    def close_inflight(self, reason: str = "no answer before the network went quiet") -> None:
        for t in self.tickets.values():
            if t.status is TicketStatus.IN_FLIGHT:
                t.fail(reason, self.runtime.now)
                self._finish_traffic(t.ticket_id)


def _search_ttl(request: SearchRequest, stops: int) -> int:
    if request.ttl is not None:
        return request.ttl
    return min(MAX_TTL, max(DEFAULT_TTL, stops))


def plan_request(request: Request, runtime: Any) -> tuple[TraceGoal | SearchGoal, Itinerary, int]:
    """Goal, itinerary and ttl for a request, validated against the scenario."""
    scenario = runtime.scenario
    if request.home not in runtime.platforms:
        raise BadRequest(f"unknown home firm {request.home!r}")
    if isinstance(request, TraceRequest):
        holder = scenario.directory.get(request.product)
        if holder is None:
            raise BadRequest(f"unknown product {request.product!r}")
        return TraceGoal(request.product), Itinerary((holder,), 0, True), request.ttl
    if isinstance(request, SearchRequest):
        if request.visit is not None:
            unknown = [f for f in request.visit if f not in runtime.platforms]
            if unknown:
                raise BadRequest(f"unknown firms in visit list: {unknown}")
            if len(set(request.visit)) != len(request.visit):
                raise BadRequest("visit list names a firm twice")
        targets = resolve_targets(
            request.criteria,
            scenario.firms,
            scenario.supplier_index(),
            home=request.home,
            visit=request.visit,
        )
        if request.visit is not None:
            planned = tuple(targets)
        else:
            planned = plan_route(request.home, targets, CostGraph.from_scenario(scenario)).order
        goal = SearchGoal(request.criteria, request.visit)
        return goal, Itinerary(planned, 0, False), _search_ttl(request, len(planned))
    raise BadRequest(f"unsupported request {request!r}")


def submit_query(request: Request, runtime: Any) -> QueryTicket:
    """Configure an agent for ``request`` and launch it from the home platform.

    Raises:
        BadRequest: unknown home or product, malformed criteria, bad ttl.
        NoTargets: a search resolves to no firm.
    """
    goal, itinerary, ttl = plan_request(request, runtime)
    home = runtime.platforms[request.home]
    first = itinerary.planned[0]
    if first != request.home and first not in home.config.keys:
        raise BadRequest(f"{request.home} shares no key with {first}")
    key = home.config.keys.get(first, bytes(32))
    try:
        capsule = new_agent(goal, request.home, itinerary, ttl, key, agent_id=runtime.new_agent_id())
    except BadConfig as exc:
        raise BadRequest(str(exc)) from None
    interface = InterfaceAgent.for_firm(runtime, request.home)
    ticket = QueryTicket(
        ticket_id=f"T{runtime.next_ticket():04d}",
        agent_id=capsule.agent_id,
        submitted_at=runtime.now,
        request=request,
    )
    interface.register(ticket)
    home.launch(capsule)
    return ticket


def run_query(request: Request, runtime: Any) -> tuple[QueryTicket, Report]:
    """Submit ``request``, drive the network until it settles, return the report."""
    ticket = submit_query(request, runtime)
    runtime.run()
    interface = InterfaceAgent.for_firm(runtime, request.home)
    interface.close_inflight()
    return ticket, interface.report(ticket)
