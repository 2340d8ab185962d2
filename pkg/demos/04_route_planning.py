"""Visiting orders: exact Held-Karp up to twelve targets, nearest-neighbour beyond.

Run: python3 demos/04_route_planning.py
"""

from __future__ import annotations

import itertools
import random
import time

from b2bagents import CostGraph, plan_route, route_cost
from b2bagents.scenarios import s1

g = CostGraph.from_scenario(s1())
route = plan_route("C", {"B", "D"}, g)
print("S1 from C:", route.order, "cost", route.total_cost)  # C-B-D = 5 + 4
print("the other way round:", route_cost(("D", "B"), "C", g))

rng = random.Random(1)
for n in (6, 10, 12, 16, 30):
    firms = ["H"] + [f"F{i}" for i in range(n)]
    g = CostGraph.from_edges(firms, [(a, b, rng.randint(1, 99)) for a, b in itertools.combinations(firms, 2)])
    t0 = time.perf_counter()
    r = plan_route("H", firms[1:], g)
    ms = (time.perf_counter() - t0) * 1000
    print(f"{n:>2} targets: cost {r.total_cost:>4}  exact={r.exact!s:<5}  {ms:8.1f} ms")
