"""Visiting-order planning for search agents.

Routes are open paths: they start at the home firm and end at the last
target.  Up to :data:`EXACT_LIMIT` targets are solved exactly with the
Held-Karp dynamic program; larger sets use nearest-neighbour.  Among routes
of equal cost the lexicographically smallest firm sequence wins, so plans
are reproducible.
"""

from __future__ import annotations

from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field

from .firmstore import QueryCriteria, Scenario
from .model import FirmId

EXACT_LIMIT = 12
INF = float("inf")


class NoTargets(LookupError):
    pass


class Unreachable(LookupError):
    def __init__(self, firm: FirmId):
        super().__init__(f"{firm} cannot be reached")
        self.firm = firm


class MissingEdge(LookupError):
    pass


@dataclass(frozen=True)
class CostGraph:
    firms: frozenset[FirmId]
    cost: Mapping[frozenset[FirmId], int] = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "firms", frozenset(self.firms))
        object.__setattr__(self, "cost", dict(self.cost))
        for pair, c in self.cost.items():
            if len(pair) != 2 or not pair <= self.firms:
                raise ValueError(f"bad edge {sorted(pair)}")
            if c < 0:
                raise ValueError("edge costs must be non-negative")

    @classmethod
    def from_edges(cls, firms: Iterable[FirmId], edges: Iterable[tuple[FirmId, FirmId, int]]) -> CostGraph:
        return cls(frozenset(firms), {frozenset((a, b)): int(c) for a, b, c in edges})

    @classmethod
    def from_scenario(cls, scenario: Scenario) -> CostGraph:
        return cls.from_edges(
            scenario.firms, ((l.a, l.b, l.latency_ms) for l in scenario.links)
        )

    def edge(self, a: FirmId, b: FirmId) -> int | None:
        if a == b:
            return 0
        return self.cost.get(frozenset((a, b)))


@dataclass(frozen=True)
class Route:
    order: tuple[FirmId, ...]
    total_cost: int
    exact: bool


def route_cost(order: Sequence[FirmId], home: FirmId, graph: CostGraph) -> int:
    total = 0
    prev = home
    for firm in order:
        c = graph.edge(prev, firm)
        if c is None:
            raise MissingEdge(f"no edge {prev}-{firm}")
        total += c
        prev = firm
    return total


def resolve_targets(
    criteria: QueryCriteria,
    firms: Iterable[FirmId],
    supplier_index: Mapping[FirmId, Iterable[FirmId]],
    *,
    home: FirmId,
    visit: Sequence[FirmId] | None = None,
) -> list[FirmId]:
    """Firms a search must visit.

    An explicit ``visit`` list is returned as given.  Otherwise the supplier
    index narrows the set when a supplier is named; without one every firm
    but ``home`` is a target.  The result is sorted.
    """
    if visit is not None:
        if not visit:
            raise NoTargets("empty visit list")
        return list(visit)
    if criteria.supplier is not None:
        candidates = set(supplier_index.get(criteria.supplier, ()))
    else:
        candidates = set(firms)
    candidates.discard(home)
    if not candidates:
        raise NoTargets("no firm matches the criteria")
    return sorted(candidates)


def _held_karp(home: FirmId, targets: list[FirmId], graph: CostGraph) -> tuple[float, tuple[FirmId, ...]]:
    n = len(targets)
    w = [[graph.edge(a, b) for b in targets] for a in targets]
    start = [graph.edge(home, t) for t in targets]
    # best[mask][j]: cheapest (cost, path) covering mask and ending at targets[j]
    best: list[dict[int, tuple[float, tuple[FirmId, ...]]]] = [dict() for _ in range(1 << n)]
    for j in range(n):
        if start[j] is not None:
            best[1 << j][j] = (start[j], (targets[j],))
    for mask in range(1, 1 << n):
        row = best[mask]
        if not row:
            continue
        for j, (cost, path) in list(row.items()):
            for k in range(n):
                if mask & (1 << k) or w[j][k] is None:
                    continue
                cand = (cost + w[j][k], path + (targets[k],))
                nxt = best[mask | (1 << k)]
                if k not in nxt or cand < nxt[k]:
                    nxt[k] = cand
    full = best[(1 << n) - 1]
    if not full:
        return INF, ()
    return min(full.values())


def _nearest_neighbour(home: FirmId, targets: list[FirmId], graph: CostGraph) -> tuple[int, tuple[FirmId, ...]]:
    remaining = set(targets)
    order: list[FirmId] = []
    total = 0
    here = home
    while remaining:
        options = [(graph.edge(here, t), t) for t in remaining]
        options = [(c, t) for c, t in options if c is not None]
        if not options:
            raise Unreachable(min(remaining))
        c, t = min(options)
        order.append(t)
        remaining.discard(t)
        total += c
        here = t
    return total, tuple(order)


def _first_unreachable(home: FirmId, targets: list[FirmId], graph: CostGraph) -> FirmId:
    """A target with no edge into the rest of the problem, else the first target."""
    pool = set(targets) | {home}
    for t in sorted(targets):
        if t not in graph.firms or all(graph.edge(t, o) is None for o in pool - {t}):
            return t
    return sorted(targets)[0]


def plan_route(home: FirmId, targets: Iterable[FirmId], graph: CostGraph) -> Route:
    """Cheapest open path from ``home`` through every target.

    Raises:
        Unreachable: no route covers every target using direct edges.
    """
    targets = sorted(set(targets) - {home})
    if not targets:
        return Route((), 0, True)
    for t in targets:
        if t not in graph.firms:
            raise Unreachable(t)
    if len(targets) <= EXACT_LIMIT:
        cost, order = _held_karp(home, targets, graph)
        if cost == INF:
            raise Unreachable(_first_unreachable(home, targets, graph))
        return Route(order, int(cost), True)
    cost, order = _nearest_neighbour(home, targets, graph)
    return Route(order, cost, False)
