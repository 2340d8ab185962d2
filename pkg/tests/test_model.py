from __future__ import annotations

import itertools
import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from b2bagents.model import (
    AccessScope,
    ChainInconsistent,
    CustodyEvent,
    DecodingError,
    EncodingUnsupported,
    LinkSpec,
    PlatformConfig,
    ProductRecord,
    TrustLevel,
    build_custody_chain,
    canonical_decode,
    canonical_encode,
    check_firm_id,
    check_product_id,
)

# documents made of the node types the encoding supports
documents = st.recursive(
    st.none() | st.booleans() | st.integers(-(2**63), 2**63) | st.text(max_size=12),
    lambda kids: st.lists(kids, max_size=4) | st.dictionaries(st.text(max_size=6), kids, max_size=4),
    max_leaves=20,
)


def ev(product, firm, frm=None, at=0, to=None, shipped=None):
    return CustodyEvent(product, firm, at, frm, to, shipped)


class TestCanonicalEncoding:
    def test_keys_sorted(self):
        assert canonical_encode({"b": 1, "a": 2}) == b'{"a":2,"b":1}'

    def test_empty_map(self):
        assert canonical_encode({}) == b"{}"

    def test_no_whitespace_and_utf8(self):
        assert canonical_encode({"k": ["é", None, True, -3]}) == '{"k":["é",null,true,-3]}'.encode()

    def test_sorted_by_code_point(self):
        assert canonical_encode({"a": 0, "B": 0, "_": 0}) == b'{"B":0,"_":0,"a":0}'

    @pytest.mark.parametrize("bad", [1.5, float("nan"), {1: "x"}, {"s": {1, 2}}, b"raw"])
    def test_unrepresentable(self, bad):
        with pytest.raises(EncodingUnsupported):
            canonical_encode(bad)

    @given(documents)
    def test_round_trip(self, doc):
        data = canonical_encode(doc)
        assert canonical_decode(data) == doc
        assert canonical_encode(canonical_decode(data)) == data

    @given(st.dictionaries(st.text(max_size=5), st.integers(), max_size=8), st.randoms())
    def test_insertion_order_irrelevant(self, doc, rnd):
        items = list(doc.items())
        rnd.shuffle(items)
        assert canonical_encode(dict(items)) == canonical_encode(doc)

    @given(documents)
    def test_matches_independent_json_spelling(self, doc):
        expected = json.dumps(doc, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
        assert canonical_encode(doc) == expected.encode()

    @pytest.mark.parametrize(
        "data",
        [b'{"b":1,"a":2}', b'{"a": 1}', b'{"a":1.0}', b'{"a":1,"a":2}', b"\xff", b"{", b"NaN"],
    )
    def test_strict_decode_rejects(self, data):
        with pytest.raises(DecodingError):
            canonical_decode(data)

    def test_lenient_decode_accepts_spacing(self):
        assert canonical_decode(b'{"b": 1, "a": 2}', strict=False) == {"a": 2, "b": 1}


class TestIds:
    @pytest.mark.parametrize("good", ["A", "F1", "ACME0123456789XY"])
    def test_firm_ok(self, good):
        assert check_firm_id(good) == good

    @pytest.mark.parametrize("bad", ["", "a", "A-B", "X" * 17, 3])
    def test_firm_bad(self, bad):
        with pytest.raises(ValueError):
            check_firm_id(bad)

    @pytest.mark.parametrize("bad", ["", "P 1", "Pé", "x" * 65])
    def test_product_bad(self, bad):
        with pytest.raises(ValueError):
            check_product_id(bad)


class TestTrustAndScope:
    def test_total_order(self):
        assert TrustLevel.TRUSTED > TrustLevel.KNOWN > TrustLevel.UNKNOWN
        assert AccessScope.FULL > AccessScope.STANDARD > AccessScope.MINIMAL

    @pytest.mark.parametrize(
        "level,scope",
        [
            (TrustLevel.TRUSTED, AccessScope.FULL),
            (TrustLevel.KNOWN, AccessScope.STANDARD),
            (TrustLevel.UNKNOWN, AccessScope.MINIMAL),
        ],
    )
    def test_mapping(self, level, scope):
        assert AccessScope.for_trust(level) is scope

    def test_parse_labels(self):
        for level in TrustLevel:
            assert TrustLevel.parse(level.label) is level
        with pytest.raises(ValueError):
            TrustLevel.parse("Friendly")


class TestRecords:
    def test_record_round_trip(self):
        r = ProductRecord("P-1", "gear", "A", 5, {"grade": "A"}, {"price": "9"})
        assert ProductRecord.from_doc(r.to_doc()) == r

    def test_negative_date(self):
        with pytest.raises(ValueError):
            ProductRecord("P-1", "gear", "A", -1)

    def test_shipped_before_received(self):
        with pytest.raises(ValueError):
            ev("P", "A", at=10, to="B", shipped=5)

    def test_self_link(self):
        with pytest.raises(ValueError):
            ev("P", "A", frm="A")

    def test_event_round_trip(self):
        e = ev("P", "B", frm="A", at=3, to="C", shipped=9)
        assert CustodyEvent.from_doc(e.to_doc()) == e


class TestCustodyChain:
    A = ev("P-100", "A", None, 1, "B", 2)
    B = ev("P-100", "B", "A", 2, "D", 5)
    D = ev("P-100", "D", "B", 5)

    def test_all_orders_agree(self):
        outputs = {tuple(e.firm for e in build_custody_chain(p)) for p in itertools.permutations([self.A, self.B, self.D])}
        assert outputs == {("A", "B", "D")}

    def test_single(self):
        only = ev("P-1", "A")
        assert build_custody_chain([only]) == [only]

    def test_missing_middle(self):
        with pytest.raises(ChainInconsistent):
            build_custody_chain([self.A, ev("P-100", "C", "B", 5)])

    @pytest.mark.parametrize(
        "events",
        [
            [],
            [ev("P", "A", None, 0, "B", 1), ev("P", "B", None, 1)],  # two origins
            [ev("P", "A", "B", 0, "B", 1), ev("P", "B", "A", 1, "A", 2)],  # no origin
            [ev("P", "A", None, 0, "B", 1), ev("P", "B", "A", 1), ev("P", "C", "A", 1)],  # fork
            [ev("P", "A", None, 0, "B", 1), ev("P", "B", "C", 1)],  # wrong predecessor
            [ev("P", "A"), ev("Q", "B")],  # two products
            [ev("P", "A", None, 0, "B", 1), ev("P", "B", "A", 1), ev("P", "B", "A", 1)],  # firm twice
        ],
    )
    def test_inconsistent(self, events):
        with pytest.raises(ChainInconsistent):
            build_custody_chain(events)

    @given(st.permutations([f"F{i}" for i in range(6)]).flatmap(
        lambda firms: st.tuples(st.just(firms), st.integers(1, 6), st.randoms())
    ))
    def test_random_chain_any_order(self, args):
        firms, n, rnd = args
        firms = firms[:n]
        events = [
            ev("P", f, firms[i - 1] if i else None, i * 10, firms[i + 1] if i + 1 < n else None,
               (i + 1) * 10 if i + 1 < n else None)
            for i, f in enumerate(firms)
        ]
        shuffled = list(events)
        rnd.shuffle(shuffled)
        assert build_custody_chain(shuffled) == events


class TestConfig:
    def test_backoff_repeats_last(self):
        cfg = PlatformConfig("A")
        assert [cfg.backoff(i) for i in range(7)] == [100, 200, 400, 800, 1600, 1600, 1600]

    def test_self_trust_rejected(self):
        with pytest.raises(ValueError):
            PlatformConfig("A", trust={"A": TrustLevel.TRUSTED})

    @pytest.mark.parametrize("cap", [0, 65])
    def test_ttl_cap_bounds(self, cap):
        with pytest.raises(ValueError):
            PlatformConfig("A", ttl_cap=cap)

    def test_short_key(self):
        with pytest.raises(ValueError):
            PlatformConfig("A", keys={"B": b"k"})


class TestLinkSpec:
    def test_up_before_first_entry(self):
        link = LinkSpec("A", "B", 5, ((100, False), (300, True)))
        assert [link.is_up(t) for t in (0, 99, 100, 299, 300)] == [True, True, False, False, True]
        assert link.next_up(150) == 300
        assert link.next_up(20) == 20

    def test_never_up_again(self):
        link = LinkSpec("A", "B", 5, ((0, False),))
        assert link.next_up(10) is None

    def test_schedule_must_increase(self):
        with pytest.raises(ValueError):
            LinkSpec("A", "B", 5, ((10, False), (10, True)))
