from collections import Counter

from dynreg.scenario import Scenario

from conftest import scenario_verdicts


def test_quiescent_run_needs_the_periodic_update():
    verdicts = scenario_verdicts("liveness-quiescent", 20, period=0)
    for v in verdicts:
        assert v.end == "budget"
        assert not v.expectations["completes"].ok
        assert v.checks["waitfree"].witness["kind"] == "pending-at-budget"
        assert v.checks["atomicity"].ok and v.checks["invariants"].ok


def test_quiescent_run_drops_the_stale_decision():
    trace = Scenario.canned("liveness-quiescent").build(0).run()
    dropped = [r for r in trace.of_kind("drop")
               if r.actor == 4 and r.payload.get("why") == "no-live-majority"]
    assert dropped
    # p4 catches up by adopting a newer state that arrived in an update message
    records = trace.records
    i = next(i for i, r in enumerate(records)
             if r.kind == "sm" and r.actor == 4 and r.payload["sm"]["ts"] == 2)
    cause = next(r for r in reversed(records[:i]) if r.kind == "deliver" and r.actor == 4)
    assert cause.payload["msg"] == "update" and cause.payload["from"] in (5, 6)


def test_fuzz_exercises_crashes_reconfigs_and_false_suspicion():
    sc = Scenario.canned("atomicity-fuzz")
    seen = Counter()
    for seed in range(40):
        sim = sc.build(seed)
        trace = sim.run()
        kinds = Counter(r.kind for r in trace)
        seen["crash"] += kinds["crash"] > 0
        seen["reconfig"] += any(r.payload["op"]["kind"] == "REC" for r in trace.of_kind("invoke"))
        seen["suspicion"] += bool(sim.detector.schedule.overrides)
        seen["late-st"] += sim.detector.schedule.stabilization_time > 100
    assert all(seen[k] >= 10 for k in ("crash", "reconfig", "suspicion", "late-st")), seen


def test_endless_reconfig_keeps_reconfiguring_after_stabilization():
    trace = Scenario.canned("liveness-endless-reconfig").build(0).run()
    st = trace.header["fd_schedule"]["stabilization_time"]
    late = [r for r in trace.of_kind("respond") if r.tick > st and r.payload["op"]["kind"] == "REC"]
    assert len(late) >= 10
