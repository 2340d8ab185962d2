from __future__ import annotations

import itertools
import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from b2bagents.firmstore import QueryCriteria
from b2bagents.planner import (
    EXACT_LIMIT,
    CostGraph,
    MissingEdge,
    NoTargets,
    Unreachable,
    plan_route,
    resolve_targets,
    route_cost,
)


def brute_force(home, targets, graph):
    best = None
    for perm in itertools.permutations(sorted(targets)):
        try:
            c = route_cost(perm, home, graph)
        except MissingEdge:
            continue
        if best is None or (c, perm) < best:
            best = (c, perm)
    return best


def random_graph(rng, n, density=1.0):
    firms = [f"F{i}" for i in range(n)]
    edges = [(a, b, rng.randint(1, 60)) for a, b in itertools.combinations(firms, 2) if rng.random() < density]
    return firms, CostGraph.from_edges(firms, edges)


@pytest.fixture
def graph(scenario):
    return CostGraph.from_scenario(scenario)


class TestS1:
    def test_search_route(self, graph):
        route = plan_route("C", {"B", "D"}, graph)
        assert route.order == ("B", "D") and route.total_cost == 9 and route.exact

    @pytest.mark.parametrize("order,cost", [((), 0), (("B",), 5), (("B", "D"), 9), (("D", "B"), 24)])
    def test_route_cost(self, graph, order, cost):
        assert route_cost(order, "C", graph) == cost

    def test_home_dropped_from_targets(self, graph):
        assert plan_route("C", {"C", "B"}, graph).order == ("B",)

    def test_no_targets_plans_empty(self, graph):
        assert plan_route("C", set(), graph).total_cost == 0


class TestResolveTargets:
    def test_supplier_narrows(self, scenario):
        got = resolve_targets(QueryCriteria(supplier="A"), scenario.firms, scenario.supplier_index(), home="C")
        assert got == ["B", "D"]

    def test_no_supplier_means_everyone_else(self, scenario):
        got = resolve_targets(QueryCriteria(), scenario.firms, scenario.supplier_index(), home="C")
        assert got == ["A", "B", "D"]

    def test_explicit_visit_verbatim(self, scenario):
        got = resolve_targets(QueryCriteria(supplier="A"), scenario.firms, {}, home="C", visit=("D", "A"))
        assert got == ["D", "A"]

    def test_unknown_supplier(self, scenario):
        with pytest.raises(NoTargets):
            resolve_targets(QueryCriteria(supplier="Z"), scenario.firms, scenario.supplier_index(), home="C")

    def test_empty_visit(self, scenario):
        with pytest.raises(NoTargets):
            resolve_targets(QueryCriteria(), scenario.firms, {}, home="C", visit=())


class TestErrors:
    def test_isolated_target(self):
        g = CostGraph.from_edges("HAB", [("H", "A", 3)])
        with pytest.raises(Unreachable) as info:
            plan_route("H", {"A", "B"}, g)
        assert info.value.firm == "B"

    def test_unknown_target(self):
        with pytest.raises(Unreachable):
            plan_route("H", {"Q"}, CostGraph.from_edges("HA", [("H", "A", 1)]))

    def test_missing_edge(self):
        with pytest.raises(MissingEdge):
            route_cost(("A", "B"), "H", CostGraph.from_edges("HAB", [("H", "A", 1)]))

    def test_negative_cost(self):
        with pytest.raises(ValueError):
            CostGraph.from_edges("AB", [("A", "B", -1)])


class TestOptimality:
    @given(st.integers(0, 10**9), st.integers(2, 9), st.floats(0.5, 1.0))
    def test_matches_brute_force(self, seed, n, density):
        rng = random.Random(seed)
        firms, g = random_graph(rng, n, density)
        home, targets = firms[0], rng.sample(firms[1:], rng.randint(1, n - 1))
        expected = brute_force(home, targets, g)
        if expected is None:
            with pytest.raises(Unreachable):
                plan_route(home, targets, g)
            return
        route = plan_route(home, targets, g)
        assert (route.total_cost, route.order) == expected
        assert route_cost(route.order, home, g) == route.total_cost

    def test_heuristic_above_limit(self):
        rng = random.Random(4)
        firms, g = random_graph(rng, EXACT_LIMIT + 4)
        route = plan_route(firms[0], firms[1:], g)
        assert not route.exact
        assert sorted(route.order) == sorted(firms[1:])
        assert route_cost(route.order, firms[0], g) == route.total_cost

    def test_heuristic_never_beats_exact(self):
        rng = random.Random(11)
        firms, g = random_graph(rng, EXACT_LIMIT + 1)
        exact = plan_route(firms[0], firms[1:], g)
        assert exact.exact
        g2 = CostGraph.from_edges(firms + ["Z"], [(a, b, g.edge(a, b)) for a, b in itertools.combinations(firms, 2)]
                                  + [("Z", f, 1000) for f in firms])
        approx = plan_route(firms[0], firms[1:] + ["Z"], g2)
        assert not approx.exact and approx.total_cost >= exact.total_cost

    def test_deterministic(self):
        rng = random.Random(2)
        firms, g = random_graph(rng, 10)
        assert len({plan_route(firms[0], firms[1:], g) for _ in range(3)}) == 1

    def test_ties_break_lexicographically(self):
        g = CostGraph.from_edges("HAB", [("H", "A", 1), ("H", "B", 1), ("A", "B", 1)])
        assert plan_route("H", {"A", "B"}, g).order == ("A", "B")
