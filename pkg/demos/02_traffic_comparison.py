"""Bytes on the wire: a travelling agent versus shipping whole tables home.

Run: python3 demos/02_traffic_comparison.py
"""

from __future__ import annotations

import random

from b2bagents import SearchRequest, TraceRequest, ingest_scenario, run_comparison
from b2bagents.scenarios import (
    BENCH_CRITERIA,
    bench_document,
    random_criteria,
    random_scenario_document,
    s1,
)

# S1 trace: the baseline has to pull every custody log, the agent only visits the chain
traffic, _, _ = run_comparison(s1(), TraceRequest("P-100", "C"))
print(f"S1 trace   agent {traffic.agent_total:>7}  baseline {traffic.baseline_total:>7}  ratio {float(traffic.ratio):.3f}")

# bench: 5 firms x 1000 records, at three selectivities
for sel in (0.01, 0.05, 0.20):
    sc = ingest_scenario(bench_document(selectivity=sel))
    traffic, report, _ = run_comparison(sc, SearchRequest("F1", BENCH_CRITERIA))
    print(
        f"bench {sel:>4.0%}  agent {traffic.agent_total:>7}  baseline {traffic.baseline_total:>7}  "
        f"ratio {float(traffic.ratio):.3f}  ({len(report.records)} records)"
    )

# small random networks: a handful of records per firm.  here the fixed cost
# of a signed capsule plus its ACK per hop often exceeds the tables themselves
print()
wins = losses = 0
for seed in range(20):
    sc = ingest_scenario(random_scenario_document(seed))
    rng = random.Random(seed)
    request = SearchRequest(rng.choice(sc.firms), random_criteria(rng, list(sc.firms)))
    try:
        traffic, report, _ = run_comparison(sc, request)
    except LookupError:
        continue
    held = sum(len(sc.stores[h.firm].products) for h in report.hops)
    mark = "<" if traffic.agent_total < traffic.baseline_total else ">="
    wins += mark == "<"
    losses += mark == ">="
    print(f"seed {seed:>2}: {len(report.hops)} hops, {held:>2} records held, agent {traffic.agent_total:>5} {mark} baseline {traffic.baseline_total:>5}")
print(f"agent cheaper in {wins} of {wins + losses}")
