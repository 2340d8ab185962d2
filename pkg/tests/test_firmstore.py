from __future__ import annotations

import copy
import json
import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from b2bagents.firmstore import (
    FirmStore,
    NotHeld,
    QueryCriteria,
    ResourceAgent,
    ScenarioInvalid,
    ScopeDenied,
    apply_scope,
    custody_lookup,
    ingest_scenario,
    load_scenario,
    query_products,
    scenario_to_doc,
)
from b2bagents.model import AccessScope, ProductRecord, TrustLevel, build_custody_chain
from b2bagents.scenarios import random_criteria, random_scenario_document

SCOPES = list(AccessScope)


def holders_from_doc(doc):
    """Current holder per product, read straight off the document's custody rows."""
    return {row["product"]: row["firm"] for row in doc["custody"] if row["shipped_to"] is None}


def brute_filter(doc, firm, predicate):
    held = holders_from_doc(doc)
    return sorted(p["id"] for p in doc["products"] if held[p["id"]] == firm and predicate(p))


class TestIngest:
    def test_s1(self, s1_doc):
        sc = ingest_scenario(s1_doc)
        assert sc.firms == ["A", "B", "C", "D"]
        assert sc.directory["P-100"] == "D"
        assert sc.directory == holders_from_doc(s1_doc)
        assert [e.firm for e in sc.chain("P-100")] == ["A", "B", "D"]
        assert {f: sorted(s.products) for f, s in sc.stores.items()}["A"] == []

    def test_zero_products(self, s1_doc):
        s1_doc["products"] = []
        s1_doc["custody"] = []
        sc = ingest_scenario(s1_doc)
        assert sc.directory == {}
        assert all(not s.products and not s.custody for s in sc.stores.values())

    def test_two_origins(self, s1_doc):
        for row in s1_doc["custody"]:
            if row["product"] == "P-100" and row["firm"] == "B":
                row["received_from"] = None
        with pytest.raises(ScenarioInvalid) as info:
            ingest_scenario(s1_doc)
        assert info.value.product == "P-100"

    def test_duplicate_firm(self, s1_doc):
        s1_doc["firms"].append(copy.deepcopy(s1_doc["firms"][0]))
        with pytest.raises(ScenarioInvalid):
            ingest_scenario(s1_doc)

    def test_duplicate_product(self, s1_doc):
        s1_doc["products"].append(copy.deepcopy(s1_doc["products"][0]))
        with pytest.raises(ScenarioInvalid):
            ingest_scenario(s1_doc)

    def test_unknown_firm_reference(self, s1_doc):
        s1_doc["custody"][0]["firm"] = "Z"
        with pytest.raises(ScenarioInvalid) as info:
            ingest_scenario(s1_doc)
        assert info.value.firm == "Z"

    def test_unknown_supplier(self, s1_doc):
        s1_doc["products"][0]["supplier"] = "Q"
        with pytest.raises(ScenarioInvalid):
            ingest_scenario(s1_doc)

    def test_product_without_custody(self, s1_doc):
        s1_doc["custody"] = [r for r in s1_doc["custody"] if r["product"] != "P-104"]
        with pytest.raises(ScenarioInvalid):
            ingest_scenario(s1_doc)

    def test_link_to_unknown_firm(self, s1_doc):
        s1_doc["links"].append({"a": "A", "b": "Z", "latency_ms": 1})
        with pytest.raises(ScenarioInvalid):
            ingest_scenario(s1_doc)

    def test_conflicting_keys(self, s1_doc):
        s1_doc["firms"][0]["keys"]["B"] = "00" * 32
        with pytest.raises(ScenarioInvalid):
            ingest_scenario(s1_doc)

    def test_bad_key_length(self, s1_doc):
        s1_doc["firms"][0]["keys"]["B"] = "abcd"
        with pytest.raises(ScenarioInvalid):
            ingest_scenario(s1_doc)

    def test_bad_trust_level(self, s1_doc):
        s1_doc["firms"][0]["trust"]["B"] = "BestFriend"
        with pytest.raises(ScenarioInvalid):
            ingest_scenario(s1_doc)

    def test_text_and_bytes_input(self, s1_doc):
        text = json.dumps(s1_doc)
        assert ingest_scenario(text).directory == ingest_scenario(text.encode()).directory

    def test_not_json(self):
        with pytest.raises(ScenarioInvalid):
            ingest_scenario("{nope")

    def test_trust_defaults_unknown(self, s1_doc):
        s1_doc["firms"][0]["trust"] = {}
        sc = ingest_scenario(s1_doc)
        assert sc.configs["A"].trust.get("B", TrustLevel.UNKNOWN) is TrustLevel.UNKNOWN

    def test_addr_and_policy_fields(self, s1_doc):
        s1_doc["firms"][1].update(addr="127.0.0.1:9101", ttl_cap=8, retry_backoff_ms=[50, 75])
        cfg = ingest_scenario(s1_doc).configs["B"]
        assert cfg.address == ("127.0.0.1", 9101)
        assert cfg.ttl_cap == 8
        assert cfg.retry_backoff_ms == (50, 75)

    def test_document_round_trip(self, s1_doc):
        sc = ingest_scenario(s1_doc)
        again = ingest_scenario(scenario_to_doc(sc))
        assert again.directory == sc.directory
        assert again.stores == sc.stores
        assert again.configs == sc.configs

    def test_load_from_file(self, tmp_path, s1_doc):
        path = tmp_path / "s1.json"
        path.write_text(json.dumps(s1_doc))
        assert load_scenario(path).directory["P-100"] == "D"

    @pytest.mark.parametrize("seed", range(10))
    def test_random_documents_ingest(self, seed):
        doc = random_scenario_document(seed)
        sc = ingest_scenario(doc)
        assert sc.directory == holders_from_doc(doc)
        for pid in sc.products:
            assert build_custody_chain(sc.chain(pid))[-1].firm == sc.directory[pid]


class TestApplyScope:
    r = ProductRecord("P-1", "gear", "A", 7, {"grade": "A"}, {"price": "10"})

    def test_full(self):
        assert apply_scope(self.r, AccessScope.FULL) == self.r

    def test_standard(self):
        out = apply_scope(self.r, AccessScope.STANDARD)
        assert out.commercial == {}
        assert (out.supplier, out.manufacture_date, out.attributes) == ("A", 7, {"grade": "A"})

    def test_minimal(self):
        out = apply_scope(self.r, AccessScope.MINIMAL)
        assert out.to_doc() == {
            "product": "P-1",
            "category": "gear",
            "supplier": None,
            "manufacture_date": None,
            "attributes": {},
            "commercial": {},
        }


def _shown_fields(record):
    doc = record.to_doc()
    return {k for k, v in doc.items() if v not in (None, {})} | {
        f"{k}.{sub}" for k in ("attributes", "commercial") for sub in doc[k]
    }


records = st.builds(
    ProductRecord,
    product=st.from_regex(r"P-[0-9]{1,4}", fullmatch=True),
    category=st.sampled_from(["gear", "valve"]),
    supplier=st.sampled_from(["A", "B"]),
    manufacture_date=st.integers(0, 10**12),
    attributes=st.dictionaries(st.sampled_from(["grade", "lot"]), st.text(min_size=1, max_size=3)),
    commercial=st.dictionaries(st.sampled_from(["price", "terms"]), st.text(min_size=1, max_size=3)),
)


@given(records)
def test_field_visibility_is_monotone(record):
    shown = [_shown_fields(apply_scope(record, s)) for s in SCOPES]
    assert shown[0] <= shown[1] <= shown[2]


class TestQueryProducts:
    def test_bearings_from_a_at_b(self, scenario, s1_doc):
        crit = QueryCriteria(category="bearing", supplier="A")
        got = [r.product for r in query_products(scenario.stores["B"], crit, AccessScope.STANDARD)]
        expected = brute_filter(s1_doc, "B", lambda p: p["category"] == "bearing" and p["supplier"] == "A")
        assert got == expected == ["P-101", "P-102", "P-110"]

    def test_empty_criteria_full(self, scenario):
        store = scenario.stores["D"]
        assert query_products(store, QueryCriteria(), AccessScope.FULL) == [
            store.products[p] for p in sorted(store.products)
        ]

    def test_no_match(self, scenario):
        crit = QueryCriteria(supplier="A", made_after=10**14)
        assert query_products(scenario.stores["B"], crit, AccessScope.FULL) == []

    def test_commercial_needs_full(self, scenario):
        crit = QueryCriteria(commercial_equals={"terms": "net30"})
        for scope in (AccessScope.MINIMAL, AccessScope.STANDARD):
            with pytest.raises(ScopeDenied):
                query_products(scenario.stores["B"], crit, scope)
        assert query_products(scenario.stores["B"], crit, AccessScope.FULL)

    def test_date_bounds_inclusive(self, scenario):
        rec = scenario.stores["B"].products["P-104"]
        t = rec.manufacture_date
        crit = QueryCriteria(made_after=t, made_before=t)
        assert [r.product for r in query_products(scenario.stores["B"], crit, AccessScope.FULL)] == ["P-104"]

    def test_criteria_bounds_order(self):
        with pytest.raises(ValueError):
            QueryCriteria(made_after=5, made_before=4)

    def test_criteria_doc_round_trip(self):
        c = QueryCriteria("gear", "A", 1, 2, {"grade": "A"}, {"price": "3"})
        assert QueryCriteria.from_doc(c.to_doc()) == c
        with pytest.raises(ValueError):
            QueryCriteria.from_doc({"colour": "red"})

    @pytest.mark.parametrize("seed", range(25))
    def test_equals_brute_force(self, seed):
        doc = random_scenario_document(seed)
        sc = ingest_scenario(doc)
        rng = random.Random(seed)
        for _ in range(4):
            crit = random_criteria(rng, sc.firms)
            for firm in sc.firms:
                for scope in SCOPES:
                    expected = [
                        apply_scope(_record(p), scope)
                        for p in sorted(doc["products"], key=lambda p: p["id"])
                        if holders_from_doc(doc)[p["id"]] == firm and _doc_match(p, crit)
                    ]
                    if crit.commercial_equals and scope < AccessScope.FULL:
                        with pytest.raises(ScopeDenied):
                            query_products(sc.stores[firm], crit, scope)
                        continue
                    assert query_products(sc.stores[firm], crit, scope) == expected

    @pytest.mark.parametrize("seed", range(15))
    def test_result_sets_monotone(self, seed):
        sc = ingest_scenario(random_scenario_document(seed))
        rng = random.Random(seed)
        crit = random_criteria(rng, sc.firms)
        if crit.commercial_equals:
            crit = QueryCriteria(**{**vars(crit), "commercial_equals": {}})
        for store in sc.stores.values():
            seen = []
            for scope in SCOPES:
                rows = [r for r in query_products(store, crit, scope) if crit.matches(r)]
                seen.append({r.product for r in rows})
            assert seen[0] <= seen[1] <= seen[2]


def _record(p):
    doc = {k: v for k, v in p.items() if k != "id"}
    return ProductRecord.from_doc({**doc, "product": p["id"]})


def _doc_match(p, crit):
    d = p["manufacture_date"]
    return (
        (crit.category is None or p["category"] == crit.category)
        and (crit.supplier is None or p["supplier"] == crit.supplier)
        and (crit.made_after is None or d >= crit.made_after)
        and (crit.made_before is None or d <= crit.made_before)
        and all(p["attributes"].get(k) == v for k, v in crit.attribute_equals.items())
        and all(p["commercial"].get(k) == v for k, v in crit.commercial_equals.items())
    )


class TestCustodyLookup:
    def test_holder(self, scenario):
        events, pred = custody_lookup(scenario.stores["D"], "P-100", AccessScope.STANDARD)
        assert [e.firm for e in events] == ["D"]
        assert pred == "B"

    def test_origin(self, scenario):
        events, pred = custody_lookup(scenario.stores["A"], "P-100", AccessScope.STANDARD)
        assert [e.firm for e in events] == ["A"]
        assert pred is None

    def test_not_held(self, scenario):
        with pytest.raises(NotHeld):
            custody_lookup(scenario.stores["C"], "P-100", AccessScope.STANDARD)

    def test_minimal_denied(self, scenario):
        with pytest.raises(ScopeDenied):
            custody_lookup(scenario.stores["D"], "P-100", AccessScope.MINIMAL)

    @pytest.mark.parametrize("seed", range(20))
    def test_predecessor_matches_global_chain(self, seed):
        sc = ingest_scenario(random_scenario_document(seed))
        for pid in sc.products:
            chain = [e.firm for e in build_custody_chain(sc.chain(pid))]
            for i, firm in enumerate(chain):
                _, pred = custody_lookup(sc.stores[firm], pid, AccessScope.FULL)
                assert pred == (chain[i - 1] if i else None)


class TestResourceAgent:
    def test_counts_reads(self, scenario):
        agent = ResourceAgent(scenario.stores["B"])
        agent.query(QueryCriteria(), AccessScope.FULL)
        agent.custody("P-101", AccessScope.STANDARD)
        agent.full_table(AccessScope.MINIMAL)
        assert agent.reads == 3

    def test_full_custody_needs_standard(self, scenario):
        with pytest.raises(ScopeDenied):
            ResourceAgent(scenario.stores["B"]).full_custody(AccessScope.MINIMAL)

    def test_store_rejects_foreign_events(self, scenario):
        with pytest.raises(ValueError):
            FirmStore("A", {}, scenario.stores["B"].custody)
