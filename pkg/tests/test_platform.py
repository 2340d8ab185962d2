from __future__ import annotations

from dataclasses import replace

import pytest

from b2bagents import agent as agent_mod
from b2bagents.agent import Itinerary, SearchGoal, TraceGoal, encode_capsule, new_agent, sign_capsule
from b2bagents.firmstore import QueryCriteria, ingest_scenario
from b2bagents.interface import SearchRequest, TraceRequest, run_query, submit_query
from b2bagents.model import AccessScope, PlatformConfig, TrustLevel
from b2bagents.platform import (
    CHECK_ORDER,
    Granted,
    Registry,
    RegistryState,
    RejectCode,
    Rejected,
    ReplayWindow,
    admit,
    assign_scope,
)
from b2bagents.runtime import Runtime
from b2bagents.scenarios import s1, s1_document
from b2bagents.wire import MsgType

AID = bytes(range(16))


def key(sc, a, b):
    return sc.configs[a].keys[b]


def trace_capsule(sc, *, home="C", dest="D", ttl=16, behavior=None, agent_id=AID):
    c = new_agent(TraceGoal("P-100"), home, Itinerary((dest,), 0, True), ttl, key(sc, home, dest),
                  agent_id=agent_id, behavior=behavior)
    return c


class TestAssignScope:
    cfg = PlatformConfig("D", trust={"B": TrustLevel.TRUSTED, "A": TrustLevel.KNOWN})

    def test_trusted(self):
        assert assign_scope("B", self.cfg) is AccessScope.FULL

    def test_known(self):
        assert assign_scope("A", self.cfg) is AccessScope.STANDARD

    def test_absent(self):
        assert assign_scope("Q", self.cfg) is AccessScope.MINIMAL

    def test_own_agents(self):
        assert assign_scope("D", self.cfg) is AccessScope.FULL


class TestAdmit:
    def test_valid_from_trusted_peer(self, scenario):
        payload = encode_capsule(trace_capsule(scenario))
        result = admit(payload, "C", scenario.configs["D"])
        assert isinstance(result, Granted) and result.scope is AccessScope.FULL

    def test_flipped_byte(self, scenario):
        payload = bytearray(encode_capsule(trace_capsule(scenario)))
        payload[20] ^= 0x01
        assert admit(bytes(payload), "C", scenario.configs["D"]) == Rejected(RejectCode.BAD_SIGNATURE)

    def test_behavior_not_whitelisted(self, scenario):
        c = trace_capsule(scenario, behavior="exploit.v1")
        assert admit(encode_capsule(c), "C", scenario.configs["D"]) == Rejected(RejectCode.BEHAVIOR_NOT_ALLOWED)

    def test_unknown_origin(self, scenario):
        cfg = replace(scenario.configs["D"], keys={})
        assert admit(encode_capsule(trace_capsule(scenario)), "C", cfg) == Rejected(RejectCode.UNKNOWN_ORIGIN)

    def test_wrong_key_is_bad_signature(self, scenario):
        # signed for C->D but claimed to come from B
        payload = encode_capsule(trace_capsule(scenario))
        assert admit(payload, "B", scenario.configs["D"]) == Rejected(RejectCode.BAD_SIGNATURE)

    def test_garbage(self, scenario):
        assert admit(b"\x00garbage", "C", scenario.configs["D"]) == Rejected(RejectCode.BAD_SIGNATURE)

    def test_schema_invalid_but_signed(self, scenario):
        k = key(scenario, "C", "D")
        from b2bagents.model import canonical_encode
        from b2bagents.wire import mac

        doc = trace_capsule(scenario).unsigned_doc()
        doc["goal"] = {"kind": "mine"}
        region = canonical_encode(doc)
        doc["signature"] = mac(k, region).hex()
        assert admit(canonical_encode(doc), "C", scenario.configs["D"]) == Rejected(RejectCode.SCHEMA_INVALID)

    def test_misrouted(self, scenario):
        c = trace_capsule(scenario, dest="B")
        c = sign_capsule(c, key(scenario, "C", "D"))
        assert admit(encode_capsule(c), "C", scenario.configs["D"]) == Rejected(RejectCode.SCHEMA_INVALID)

    @pytest.mark.parametrize("ttl", [0, 9])
    def test_ttl_out_of_range(self, scenario, ttl):
        cfg = replace(scenario.configs["D"], ttl_cap=8)
        c = sign_capsule(replace(trace_capsule(scenario), ttl=ttl), key(scenario, "C", "D"))
        assert admit(encode_capsule(c), "C", cfg) == Rejected(RejectCode.TTL_EXHAUSTED)

    def test_homecoming_with_zero_ttl(self, scenario):
        c = trace_capsule(scenario)
        c = replace(c, ttl=0, itinerary=replace(c.itinerary, position=1))
        c = sign_capsule(c, key(scenario, "D", "C"))
        assert isinstance(admit(encode_capsule(c), "D", scenario.configs["C"]), Granted)

    def test_replay(self, scenario):
        payload = encode_capsule(trace_capsule(scenario))
        window = ReplayWindow()
        assert isinstance(admit(payload, "C", scenario.configs["D"], window), Granted)
        assert admit(payload, "C", scenario.configs["D"], window) == Rejected(RejectCode.REPLAY)

    def test_first_failure_wins(self, scenario):
        # off-whitelist behavior with ttl 0 and a bad signature
        c = replace(trace_capsule(scenario, behavior="exploit.v1"), ttl=0)
        assert admit(encode_capsule(c), "C", scenario.configs["D"]) == Rejected(RejectCode.BAD_SIGNATURE)
        c = sign_capsule(c, key(scenario, "C", "D"))
        assert admit(encode_capsule(c), "C", scenario.configs["D"]) == Rejected(RejectCode.BEHAVIOR_NOT_ALLOWED)

    def test_check_order_constant(self):
        assert [c.value for c in CHECK_ORDER] == [
            "UnknownOrigin", "BadSignature", "SchemaInvalid", "BehaviorNotAllowed", "TtlExhausted", "Replay",
        ]


class TestReplayWindow:
    def test_lru_eviction(self):
        w = ReplayWindow(capacity=3)
        for i in range(4):
            w.add((bytes([i]), 0))
        assert (bytes([0]), 0) not in w
        assert len(w) == 3

    def test_keyed_by_hop(self):
        w = ReplayWindow()
        w.add((AID, 0))
        assert (AID, 1) not in w


class TestRegistry:
    def test_single_running_entry(self, scenario):
        reg = Registry()
        c = trace_capsule(scenario)
        reg.add(c, 0)
        with pytest.raises(RuntimeError):
            reg.add(c, 1)

    def test_transitions(self, scenario):
        reg = Registry()
        entry = reg.add(trace_capsule(scenario), 5)
        reg.transition(entry, RegistryState.AWAITING_TRANSFER)
        reg.transition(entry, RegistryState.DEPARTED)
        with pytest.raises(RuntimeError):
            reg.transition(entry, RegistryState.RUNNING)

    def test_snapshot_is_a_copy(self, scenario):
        reg = Registry()
        entry = reg.add(trace_capsule(scenario), 5)
        snap = reg.snapshot()
        reg.transition(entry, RegistryState.DEPARTED)
        assert snap[0].state is RegistryState.RUNNING


class TestRuntimeFlows:
    def test_quiescent(self, scenario):
        assert Runtime(scenario).platforms["B"].registry_snapshot() == []

    def test_admit_and_depart(self, scenario):
        rt = Runtime(scenario)
        run_query(TraceRequest("P-100", "C"), rt)
        snap = rt.platforms["D"].registry_snapshot()
        assert [(e.state, e.origin, e.behavior) for e in snap] == [(RegistryState.DEPARTED, "C", "trace.v1")]

    def test_two_concurrent_agents(self, scenario):
        rt = Runtime(scenario)
        submit_query(TraceRequest("P-100", "C"), rt)
        submit_query(SearchRequest("C", QueryCriteria(supplier="A")), rt)
        rt.run()
        entries = rt.platforms["B"].registry_snapshot()
        assert len(entries) == 2 and len({e.agent_id for e in entries}) == 2
        assert all(e.state is RegistryState.DEPARTED for e in entries)
        times = [e.admitted_at for e in entries]
        assert times == sorted(times)

    def test_one_transfer_one_ack_per_hop(self, scenario):
        rt = Runtime(scenario)
        run_query(TraceRequest("P-100", "C"), rt)
        cd = rt.links[frozenset("CD")]
        assert (cd.frames_a_to_b, cd.frames_b_to_a) == (1, 1)  # TRANSFER C->D, ACK D->C
        sent = [e for e in rt.events if e["event"] == "sent"]
        assert all(e["attempt"] == 0 for e in sent)

    def test_every_execution_follows_admission(self, scenario):
        rt = Runtime(scenario)
        run_query(TraceRequest("P-100", "C"), rt)
        run_query(SearchRequest("C", QueryCriteria(category="gear")), rt)
        admitted = set()
        for e in rt.events:
            if e["event"] == "admitted":
                admitted.add((e["firm"], e["agent"], e["hop"]))
            if e["event"] == "execute":
                assert (e["firm"], e["agent"], e["hop"]) in admitted

    def test_down_link_then_up(self):
        sc = s1(schedule={("C", "D"): [(0, False), (5000, True)]})
        rt = Runtime(sc)
        _, report = run_query(TraceRequest("P-100", "C"), rt)
        assert report.status == "Completed"
        granted_at_d = [e for e in rt.events if e["event"] == "admitted" and e["firm"] == "D"]
        assert len(granted_at_d) == 1
        attempts = [e for e in rt.events if e["event"] in ("link_down", "sent") and e["dest"] == "D"]
        first_sent = next(e for e in attempts if e["event"] == "sent")
        # retry times are cumulative backoff 100, 300, 700, 1500, 3100, 4700, 6300...
        assert [e["t"] for e in attempts] == [0, 100, 300, 700, 1500, 3100, 4700, 6300]
        assert first_sent["t"] == 6300 and granted_at_d[0]["t"] == 6320

    def test_duplicate_transfer_replayed(self, scenario):
        rt = Runtime(scenario)
        rt.duplicate_transfers = {0}
        _, report = run_query(TraceRequest("P-100", "C"), rt)
        rejected = [e for e in rt.events if e["event"] == "rejected"]
        assert [e["code"] for e in rejected] == ["Replay"]
        assert list(report.chain) == ["A", "B", "D"]
        assert rt.platforms["D"].executions == 1

    def test_never_up_is_undeliverable(self):
        sc = s1(schedule={("C", "D"): [(0, False)]})
        rt = Runtime(sc, horizon_ms=20_000)
        ticket, report = run_query(TraceRequest("P-100", "C"), rt)
        assert report.status == "Failed"
        assert "undeliverable" in report.failure
        assert any(e["event"] == "undeliverable" for e in rt.events)

    def test_reject_frame_reaches_sender(self):
        doc = s1_document()
        for f in doc["firms"]:
            if f["id"] == "D":
                f["behavior_whitelist"] = ["search.v1"]
        rt = Runtime(ingest_scenario(doc))
        _, report = run_query(TraceRequest("P-100", "C"), rt)
        assert report.status == "Failed" and "BehaviorNotAllowed" in report.failure
        assert rt.platforms["D"].executions == 0
        assert rt.platforms["C"].registry_snapshot() == []

    def test_behavior_panic_reports_to_home(self, monkeypatch):
        def boom(*args):
            raise ZeroDivisionError("bad step")

        monkeypatch.setitem(agent_mod.BEHAVIORS, "boom.v1", boom)
        doc = s1_document()
        for f in doc["firms"]:
            f["behavior_whitelist"] = ["trace.v1", "search.v1", "boom.v1"]
        sc = ingest_scenario(doc)
        rt = Runtime(sc)
        failures = []

        class Sink:
            def on_homecoming(self, capsule):
                raise AssertionError("should not come home")

            def on_failure(self, agent_id, reason):
                failures.append(reason)

        rt.platforms["C"].interface = Sink()
        capsule = new_agent(SearchGoal(), "C", Itinerary(("D",)), 4, key(sc, "C", "D"),
                            agent_id=AID, behavior="boom.v1")
        rt.platforms["C"].launch(capsule)
        rt.run()
        assert len(failures) == 1 and "ZeroDivisionError" in failures[0]
        (entry,) = rt.platforms["D"].registry_snapshot()
        assert entry.state is RegistryState.REJECTED
        result_frames = [e for e in rt.events if e["event"] == "result_error"]
        assert result_frames and result_frames[0]["firm"] == "C"

    def test_hello_is_answered_with_reject(self, scenario):
        rt = Runtime(scenario)
        rt.platforms["C"]._send_frame("D", MsgType.HELLO, b"{}")
        rt.run()
        assert any(e["event"] == "hello" and e["firm"] == "D" for e in rt.events)

    def test_forged_frame_dropped(self, scenario):
        rt = Runtime(scenario)
        rt.platforms["D"].on_frame("C", b"AG\x01\x02\x00\x00\x00\x00" + bytes(32))
        assert rt.events[-1]["event"] == "frame_dropped"
        assert rt.platforms["D"].executions == 0
