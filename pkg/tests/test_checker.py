import pytest
from hypothesis import given, settings, strategies as st

from dynreg.checker import (
    History,
    blackbox_linearizable,
    build_sigma,
    check_atomicity,
    check_consensus,
    check_membership_views,
    check_replica_invariants,
    check_wait_freedom,
    verify,
)
from dynreg.core import request_to_json
from dynreg.scenario import Scenario
from dynreg.statemachine import ReplicaState, apply_decision
from dynreg.trace import RunTrace

from conftest import RD, WR, entry


class TraceBuilder:
    """Hand-written traces: client events plus the decisions that order them."""

    def __init__(self, members=(1, 2, 3)):
        self.trace = RunTrace()
        self.trace.add(0, "header", "-", {"scenario": "hand", "initial": list(members)})
        self.sm = ReplicaState.initial(members)
        self.tick = 0
        self.nums = {}

    def invoke(self, pid, op):
        self.tick += 1
        self.nums[pid] = self.nums.get(pid, 0) + 1
        self.trace.add(self.tick, "invoke", pid, {"op": op.to_json(), "num": self.nums[pid]})
        return self

    def respond(self, pid, op, result):
        self.tick += 1
        self.trace.add(self.tick, "respond", pid,
                       {"op": op.to_json(), "num": self.nums[pid], "result": result})
        return self

    def decide(self, *entries):
        self.tick += 1
        req = frozenset(entries)
        key = {"ts": self.sm.ts, "mem": sorted(self.sm.cng.mem), "rem": sorted(self.sm.cng.rem)}
        post = apply_decision(self.sm, req)
        for p in sorted(self.sm.cng.mem):
            self.trace.add(self.tick, "propose", p, {"key": key, "req": request_to_json(req)})
        self.trace.add(self.tick, "decide", "C", {"key": key, "req": request_to_json(req),
                                                 "post": post.to_json(),
                                                 "proposers": sorted(self.sm.cng.mem)})
        self.sm = post
        return self

    def end(self, reason="quiescent"):
        self.trace.add(self.tick, "end", "-", {"reason": reason})
        return self.trace


def sequential_write_then_read(read_result=5):
    b = TraceBuilder()
    b.invoke(2, WR(5)).decide(entry(2, WR(5))).respond(2, WR(5), "ok")
    b.invoke(1, RD()).decide(entry(1, RD())).respond(1, RD(), read_result)
    return b.end()


def atomic(trace):
    return check_atomicity(History.from_trace(trace), build_sigma(trace))


def test_sigma_follows_timestamp_order():
    b = TraceBuilder()
    b.invoke(1, WR(1)).invoke(2, WR(2))
    b.decide(entry(2, WR(2))).decide(entry(1, WR(1)))
    assert [pid for pid, _, _ in build_sigma(b.end())] == [2, 1]


def test_sigma_segment_writes_descending_then_reads():
    b = TraceBuilder((1, 2, 3, 4, 5))
    b.invoke(2, WR(1)).invoke(5, WR(2)).invoke(1, RD())
    b.decide(entry(2, WR(1)), entry(5, WR(2)), entry(1, RD()))
    assert [(pid, op.kind.value) for pid, op, _ in build_sigma(b.end())] == [
        (5, "WR"), (2, "WR"), (1, "RD")]


def test_empty_run_has_empty_sigma():
    assert build_sigma(TraceBuilder().end()) == []


def test_sequential_history_passes_both_oracles():
    trace = sequential_write_then_read()
    assert atomic(trace).ok
    assert blackbox_linearizable(History.from_trace(trace)) is True


def test_wrong_read_fails_both_oracles_with_witness():
    trace = sequential_write_then_read(read_result=7)
    res = atomic(trace)
    assert not res.ok
    assert res.witness["kind"] == "wrong-result"
    assert res.witness["op"]["pid"] == 1 and res.witness["expected"] == 5
    assert blackbox_linearizable(History.from_trace(trace)) is False


def test_real_time_violation_detected():
    b = TraceBuilder()
    b.invoke(1, WR(1)).decide(entry(1, WR(1)))
    b.respond(1, WR(1), "ok")
    b.invoke(2, WR(2))
    # forge a chain where the later write is ordered first
    b.trace.records = [r for r in b.trace.records if r.kind != "decide"]
    b.sm = ReplicaState.initial((1, 2, 3))
    b.decide(entry(2, WR(2))).decide(entry(1, WR(1)))
    res = atomic(b.respond(2, WR(2), "ok").end())
    assert res.witness["kind"] == "real-time-order"


def test_completed_op_missing_from_sigma():
    b = TraceBuilder()
    b.invoke(1, WR(1)).respond(1, WR(1), "ok")
    assert atomic(b.end()).witness["kind"] == "completed-not-linearized"


def test_decided_twice_is_reported():
    b = TraceBuilder()
    b.invoke(1, WR(1)).decide(entry(1, WR(1)))
    trace = b.end()
    dup = [r for r in trace.records if r.kind == "decide"][0]
    trace.records.insert(-1, dup._replace(payload={**dup.payload, "key": {**dup.payload["key"], "ts": 1}}))
    with pytest.raises(ValueError, match="decided twice"):
        build_sigma(trace)
    assert verify(trace, ["atomicity"]).checks["atomicity"].witness["kind"] == "decided-twice"


def test_pending_write_may_or_may_not_take_effect():
    b = TraceBuilder()
    b.invoke(2, WR(4))
    b.invoke(1, RD()).respond(1, RD(), 4)
    assert blackbox_linearizable(History.from_trace(b.end())) is True
    b2 = TraceBuilder()
    b2.invoke(2, WR(4))
    b2.invoke(1, RD()).respond(1, RD(), None)
    assert blackbox_linearizable(History.from_trace(b2.end())) is True


def test_blackbox_skips_large_histories():
    b = TraceBuilder()
    for i in range(13):
        b.invoke(1, WR(i)).respond(1, WR(i), "ok")
    assert blackbox_linearizable(History.from_trace(b.end())) is None


def test_concurrent_reads_cannot_see_values_out_of_order():
    # WR(1) then WR(2) sequentially; a later reader that saw 2 precedes one that sees 1
    b = TraceBuilder()
    b.invoke(1, WR(1)).respond(1, WR(1), "ok")
    b.invoke(1, WR(2))
    b.invoke(2, RD()).respond(2, RD(), 2)
    b.invoke(3, RD()).respond(3, RD(), 1)
    assert blackbox_linearizable(History.from_trace(b.end())) is False


def test_wait_freedom_vacuous_on_empty_run():
    trace = TraceBuilder().end()
    assert check_wait_freedom(trace, History.from_trace(trace)).ok


def test_wait_freedom_reports_pending_at_budget():
    b = TraceBuilder()
    b.invoke(1, WR(1))
    trace = b.end("budget")
    res = check_wait_freedom(trace, History.from_trace(trace))
    assert not res.ok and res.witness["kind"] == "pending-at-budget"
    assert check_wait_freedom(trace, History.from_trace(trace), expected_pending=[1]).ok


def test_wait_freedom_exempts_crashed_and_removed():
    b = TraceBuilder()
    b.invoke(1, WR(1))
    b.trace.add(b.tick, "crash", 1, {"clause": "minority"})
    trace = b.end("budget")
    assert check_wait_freedom(trace, History.from_trace(trace)).ok


def test_equal_ts_with_different_state_is_a_violation():
    trace = sequential_write_then_read()
    decide = next(r for r in trace if r.kind == "decide")
    forged = dict(decide.payload["post"], value=99)
    trace.records.insert(-1, decide._replace(kind="sm", actor=3, payload={"via": "adopt", "sm": forged}))
    kinds = {v["kind"] for v in check_replica_invariants(trace)}
    assert "equal-ts-differ" in kinds


def test_last_ops_decrease_is_a_violation():
    b = TraceBuilder()
    b.invoke(1, WR(1)).decide(entry(1, WR(1)))
    trace = b.end()
    decide = next(r for r in trace if r.kind == "decide")
    newer = dict(decide.payload["post"], ts=2, lastOps=[[1, 0, None], [2, 0, None], [3, 0, None]])
    for sm in (decide.payload["post"], newer):
        trace.records.insert(-1, decide._replace(kind="sm", actor=2, payload={"via": "adopt", "sm": sm}))
    kinds = {v["kind"] for v in check_replica_invariants(trace)}
    assert "lastops-decreased" in kinds


def test_consensus_tampering_detected():
    b = TraceBuilder()
    b.invoke(1, WR(1)).decide(entry(1, WR(1)))
    trace = b.end()
    trace.records = [r for r in trace.records if not (r.kind == "propose" and r.actor != 1)]
    kinds = {v["kind"] for v in check_consensus(trace)}
    assert "majority-gate" in kinds
    decide = next(r for r in trace if r.kind == "decide")
    trace.records.append(decide._replace(payload={**decide.payload, "req": []}))
    kinds = {v["kind"] for v in check_consensus(trace)}
    assert "agreement" in kinds


def test_membership_view_literal_form_flags_the_removal_window():
    sc = Scenario.canned("liveness-quiescent")
    trace = sc.build(0).run()
    assert check_membership_views(trace) == []
    literal = check_membership_views(trace, literal=True)
    assert [v["kind"] for v in literal] == ["view-members-not-in-state"]
    # the flagged point is the decision of the pending removal, before it responds
    rec = trace.records[literal[0]["record"]]
    assert rec.kind == "decide"
    assert set(literal[0]["missing"]) == {1, 2, 3}


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 100_000))
def test_white_box_pass_implies_black_box_pass(seed):
    sc = Scenario.canned("atomicity-fuzz")
    sc.plan["max_ops"] = 10
    trace = sc.build(seed).run()
    h = History.from_trace(trace)
    white = check_atomicity(h, build_sigma(trace))
    black = blackbox_linearizable(h)
    assert black is not None
    assert not white.ok or black


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 100_000), st.data())
def test_corrupted_read_caught_by_both_oracles(seed, data):
    sc = Scenario.canned("atomicity-fuzz")
    sc.plan["max_ops"] = 10
    trace = sc.build(seed).run()
    reads = [i for i, r in enumerate(trace.records) if r.kind == "respond" and r.payload["op"]["kind"] == "RD"]
    if not reads:
        return
    i = data.draw(st.sampled_from(reads))
    rec = trace.records[i]
    trace.records[i] = rec._replace(payload={**rec.payload, "result": 10_000})
    h = History.from_trace(trace)
    assert not check_atomicity(h, build_sigma(trace)).ok
    assert blackbox_linearizable(h) is False
