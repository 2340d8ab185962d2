"""Agents keep going when links drop: retries, replays and exactly-once admission.

Run: python3 demos/03_intermittent_links.py
"""

from __future__ import annotations

from b2bagents import TraceRequest, run_intermittency
from b2bagents.scenarios import s1

# the C-D link is down for the first five seconds
sc = s1(schedule={("C", "D"): [(0, False), (5000, True)]})

# and the second TRANSFER frame of the run is delivered twice
log = run_intermittency(sc, TraceRequest("P-100", "C"), duplicate_transfers={1})

for e in log.events:
    if e["event"] in ("link_down", "sent") and e["dest"] == "D":
        print(f"t={e['t']:>5}  C->D attempt {e['attempt']}: {e['event']}")

print("first admission at D:", next(e["t"] for e in log.deliveries if e["firm"] == "D"), "ms")
print("retries:", log.retries, " replay rejections:", log.replay_rejections)
print("exactly once per hop:", log.exactly_once)
print("chain:", " -> ".join(log.report.chain), " home at", log.completed_at, "ms")
