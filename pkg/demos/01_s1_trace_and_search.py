"""Walk through the S1 network: four firms, one traced product, two searches.

Run: python3 demos/01_s1_trace_and_search.py
"""

from __future__ import annotations

from b2bagents import QueryCriteria, Runtime, SearchRequest, TraceRequest, render, run_query
from b2bagents.scenarios import s1

sc = s1()
rt = Runtime(sc, seed=0)
print("firms:", ", ".join(sc.firms))
print("P-100 is held by", sc.directory["P-100"])

# C asks where P-100 came from; the agent starts at the holder and walks back
ticket, report = run_query(TraceRequest("P-100", "C"), rt)
print()
print(render(report).decode())

# supplier A's goods, wherever they sit now.  B trusts C as Known, so its
# records arrive without prices; D trusts C fully
_, report = run_query(SearchRequest("C", QueryCriteria(supplier="A")), rt)
print(render(report).decode())

# a commercial filter is refused below Full scope, so only D answers
_, report = run_query(SearchRequest("C", QueryCriteria(commercial_equals={"terms": "net30"})), rt)
for hop in report.hops:
    print(f"{hop.firm}: {hop.scope_granted.label:<8} {hop.outcome.value}")

# which agents passed through B
for entry in rt.platforms["B"].registry_snapshot():
    print(entry.agent_id.hex()[:12], entry.behavior, entry.state.value)
