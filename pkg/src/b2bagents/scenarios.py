"""Scenario documents: the S1 reference network and seeded generators.

All generators return plain scenario documents (the JSON file format), so
what they produce can be written to disk and fed to the CLI unchanged.
"""

from __future__ import annotations

import hashlib
import random
from itertools import combinations
from typing import Any

from .firmstore import QueryCriteria, Scenario, ingest_scenario

CATEGORIES = ("bearing", "shaft", "gear", "valve")
GRADES = ("A", "B", "C")
DAY_MS = 86_400_000
EPOCH_2008 = 1_199_145_600_000


def pair_key(label: str, a: str, b: str) -> str:
    lo, hi = sorted((a, b))
    return hashlib.sha256(f"{label}:{lo}:{hi}".encode()).hexdigest()


def _firm_docs(firms: list[str], trust: dict[str, dict[str, str]], key_of) -> list[dict[str, Any]]:
    return [
        {
            "id": f,
            "keys": {p: key_of(f, p) for p in firms if p != f},
            "trust": dict(trust.get(f, {})),
        }
        for f in firms
    ]


# --------------------------------------------------------------------------
# S1


S1_LATENCY = {
    ("A", "B"): 10,
    ("A", "C"): 30,
    ("A", "D"): 25,
    ("B", "C"): 5,
    ("B", "D"): 4,
    ("C", "D"): 20,
}

S1_TRUST = {
    "A": {"B": "Trusted", "C": "Known", "D": "Known"},
    "B": {"A": "Trusted", "C": "Known", "D": "Trusted"},
    "C": {"A": "Known", "B": "Known", "D": "Trusted"},
    "D": {"A": "Known", "B": "Trusted", "C": "Trusted"},
}


def _s1_product(pid: str, category: str, supplier: str, day: int, grade: str, price: int) -> dict[str, Any]:
    return {
        "id": pid,
        "category": category,
        "supplier": supplier,
        "manufacture_date": EPOCH_2008 + day * DAY_MS,
        "attributes": {"grade": grade, "lot": f"L{pid[2:]}"},
        "commercial": {"price": str(price), "terms": "net30"},
    }


def s1_document(schedule: dict[tuple[str, str], list[tuple[int, bool]]] | None = None) -> dict[str, Any]:
    """Four firms; P-100 travelled A -> B -> D; B and D hold ten products each.

    A produces bearings and shafts but holds no stock; C is the customer
    that usually launches queries.
    """
    schedule = schedule or {}
    firms = ["A", "B", "C", "D"]
    spec = [
        # (id, category, supplier, day, grade, price, chain of (firm, day))
        ("P-100", "bearing", "A", 1, "A", 120, [("A", 2), ("B", 5), ("D", 9)]),
        ("P-101", "bearing", "A", 3, "B", 110, [("A", 4), ("B", 8)]),
        ("P-102", "bearing", "A", 6, "A", 125, [("A", 7), ("B", 10)]),
        ("P-103", "shaft", "A", 2, "C", 300, [("A", 3), ("B", 6)]),
        ("P-104", "gear", "B", 4, "A", 80, [("B", 4)]),
        ("P-105", "gear", "B", 5, "B", 75, [("B", 5)]),
        ("P-106", "valve", "B", 8, "A", 60, [("B", 8)]),
        ("P-107", "bearing", "B", 9, "C", 95, [("B", 9)]),
        ("P-108", "shaft", "A", 11, "A", 310, [("A", 12), ("B", 14)]),
        ("P-109", "gear", "B", 12, "C", 70, [("B", 12)]),
        ("P-110", "bearing", "A", 13, "B", 118, [("A", 13), ("B", 15)]),
        ("P-111", "bearing", "A", 5, "A", 121, [("A", 6), ("D", 9)]),
        ("P-112", "gear", "B", 6, "B", 82, [("B", 7), ("D", 10)]),
        ("P-113", "valve", "D", 3, "A", 55, [("D", 3)]),
        ("P-114", "valve", "D", 8, "B", 58, [("D", 8)]),
        ("P-115", "shaft", "A", 9, "A", 305, [("A", 10), ("B", 11), ("D", 13)]),
        ("P-116", "bearing", "B", 10, "C", 99, [("B", 10), ("D", 12)]),
        ("P-117", "gear", "D", 14, "A", 77, [("D", 14)]),
        ("P-118", "bearing", "A", 15, "B", 117, [("A", 15), ("D", 18)]),
        ("P-119", "valve", "D", 16, "C", 52, [("D", 16)]),
    ]
    products = []
    custody = []
    for pid, cat, sup, day, grade, price, chain in spec:
        products.append(_s1_product(pid, cat, sup, day, grade, price))
        for i, (firm, d) in enumerate(chain):
            nxt = chain[i + 1] if i + 1 < len(chain) else None
            custody.append(
                {
                    "product": pid,
                    "firm": firm,
                    "received_from": chain[i - 1][0] if i else None,
                    "received_at": EPOCH_2008 + d * DAY_MS,
                    "shipped_to": nxt[0] if nxt else None,
                    "shipped_at": EPOCH_2008 + nxt[1] * DAY_MS if nxt else None,
                }
            )
    links = []
    for (a, b), lat in S1_LATENCY.items():
        sched = schedule.get((a, b)) or schedule.get((b, a)) or []
        links.append(
            {"a": a, "b": b, "latency_ms": lat, "schedule": [{"from_ms": t, "up": u} for t, u in sched]}
        )
    return {
        "firms": _firm_docs(firms, S1_TRUST, lambda f, p: pair_key("s1", f, p)),
        "links": links,
        "products": products,
        "custody": custody,
    }


def s1(**kwargs: Any) -> Scenario:
    return ingest_scenario(s1_document(**kwargs))


# --------------------------------------------------------------------------
# random battery


def _firm_names(n: int) -> list[str]:
    return [chr(ord("A") + i) for i in range(n)]


def random_record(rng: random.Random, pid: str, supplier: str, extra_attrs: int = 0) -> dict[str, Any]:
    attributes = {
        "grade": rng.choice(GRADES),
        "lot": f"L{rng.randrange(10_000):04d}",
        "color": rng.choice(("black", "steel", "blue")),
    }
    for i in range(extra_attrs):
        attributes[f"spec{i}"] = f"{rng.randrange(1000):03d}-{rng.choice('KLMNP')}"
    return {
        "id": pid,
        "category": rng.choice(CATEGORIES),
        "supplier": supplier,
        "manufacture_date": EPOCH_2008 + rng.randrange(365) * DAY_MS,
        "attributes": attributes,
        "commercial": {
            "price": str(rng.randrange(10, 1000)),
            "terms": rng.choice(("net30", "net60", "prepaid")),
        },
    }


def _chain_events(rng: random.Random, pid: str, firms: list[str], start_day: int) -> list[dict[str, Any]]:
    out = []
    day = start_day
    for i, firm in enumerate(firms):
        received = EPOCH_2008 + day * DAY_MS
        day += rng.randrange(1, 10)
        last = i + 1 == len(firms)
        out.append(
            {
                "product": pid,
                "firm": firm,
                "received_from": firms[i - 1] if i else None,
                "received_at": received,
                "shipped_to": None if last else firms[i + 1],
                "shipped_at": None if last else EPOCH_2008 + day * DAY_MS,
            }
        )
    return out


def random_scenario_document(
    seed: int,
    *,
    max_firms: int = 8,
    max_products: int = 40,
    max_chain: int = 6,
    levels: tuple[str, ...] = ("Trusted", "Known"),
    extra_attrs: int = 0,
) -> dict[str, Any]:
    """A seeded random scenario with a full mesh of links."""
    rng = random.Random(seed)
    n_firms = rng.randint(2, max_firms)
    firms = _firm_names(n_firms)
    trust = {f: {p: rng.choice(levels) for p in firms if p != f} for f in firms}
    keys = {frozenset(pair): rng.getrandbits(256).to_bytes(32, "big").hex() for pair in combinations(firms, 2)}
    links = [{"a": a, "b": b, "latency_ms": rng.randint(1, 50)} for a, b in combinations(firms, 2)]
    products = []
    custody = []
    for i in range(rng.randint(1, max_products)):
        pid = f"P-{i:03d}"
        length = rng.randint(1, min(max_chain, n_firms))
        chain = rng.sample(firms, length)
        products.append(random_record(rng, pid, rng.choice(firms), extra_attrs))
        custody.extend(_chain_events(rng, pid, chain, rng.randrange(365)))
    return {
        "firms": _firm_docs(firms, trust, lambda f, p: keys[frozenset((f, p))]),
        "links": links,
        "products": products,
        "custody": custody,
    }


def random_criteria(rng: random.Random, firms: list[str]) -> QueryCriteria:
    """Random conjunctive criteria over the fields the generators populate."""
    kw: dict[str, Any] = {}
    if rng.random() < 0.5:
        kw["category"] = rng.choice(CATEGORIES)
    if rng.random() < 0.3:
        kw["supplier"] = rng.choice(firms)
    if rng.random() < 0.3:
        lo = EPOCH_2008 + rng.randrange(365) * DAY_MS
        kw["made_after"] = lo
        if rng.random() < 0.5:
            kw["made_before"] = lo + rng.randrange(1, 200) * DAY_MS
    if rng.random() < 0.3:
        kw["attribute_equals"] = {"grade": rng.choice(GRADES)}
    if rng.random() < 0.15:
        kw["commercial_equals"] = {"terms": rng.choice(("net30", "net60", "prepaid"))}
    return QueryCriteria(**kw)


# --------------------------------------------------------------------------
# bench


def bench_document(
    seed: int = 7,
    *,
    firms: int = 5,
    records_per_firm: int = 1000,
    selectivity: float = 0.01,
) -> dict[str, Any]:
    """Equal-sized firm tables where ``selectivity`` of each matches grade "X"."""
    rng = random.Random(seed)
    names = [f"F{i + 1}" for i in range(firms)]
    keys = {frozenset(pair): rng.getrandbits(256).to_bytes(32, "big").hex() for pair in combinations(names, 2)}
    trust = {f: {p: "Known" for p in names if p != f} for f in names}
    links = [{"a": a, "b": b, "latency_ms": rng.randint(5, 40)} for a, b in combinations(names, 2)]
    hits = round(records_per_firm * selectivity)
    products = []
    custody = []
    n = 0
    for holder in names:
        for j in range(records_per_firm):
            pid = f"P-{n:06d}"
            n += 1
            supplier = rng.choice(names)
            rec = random_record(rng, pid, supplier, extra_attrs=4)
            rec["attributes"]["grade"] = "X" if j < hits else rng.choice(GRADES)
            products.append(rec)
            chain = [supplier, holder] if supplier != holder else [holder]
            custody.extend(_chain_events(rng, pid, chain, rng.randrange(365)))
    return {
        "firms": _firm_docs(names, trust, lambda f, p: keys[frozenset((f, p))]),
        "links": links,
        "products": products,
        "custody": custody,
    }


BENCH_CRITERIA = QueryCriteria(attribute_equals={"grade": "X"})
