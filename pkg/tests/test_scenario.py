import pytest
import yaml

from dynreg.checker import verify
from dynreg.drivers import EpochDriver
from dynreg.fd import SuspectForever
from dynreg.kernel import LinkRule
from dynreg.scenario import CANNED, Scenario, ScenarioError

BASE = {
    "name": "t",
    "initial": [1, 2, 3],
    "plan": {"kind": "scripted", "events": [{"label": "w", "pid": 1, "at": 1,
                                             "op": {"kind": "WR", "value": 1}}]},
}


def load(**changes):
    raw = {**BASE, **changes}
    return Scenario.from_dict(raw)


@pytest.mark.parametrize("name", CANNED)
def test_canned_scenarios_load(name):
    sc = Scenario.canned(name)
    assert sc.name == name and sc.seeds >= 1


def test_empty_initial_membership_rejected():
    with pytest.raises(ScenarioError, match="non-empty"):
        load(initial=[])


def test_unknown_keys_rejected():
    with pytest.raises(ScenarioError, match="unknown"):
        load(colour="blue")


def test_contradictory_fd_schedule_rejected():
    fd = {"kind": "eventually-perfect", "stabilization_time": 10,
          "overrides": [{"target": 2, "start": 0, "end": 50, "answer": "fail"}]}
    with pytest.raises(ScenarioError, match="accuracy"):
        load(fd=fd)


def test_readd_of_removed_process_rejected():
    events = [
        {"label": "a", "pid": 1, "at": 1, "op": {"kind": "REC", "changes": [["remove", 3]]}},
        {"label": "b", "pid": 1, "after": "a", "op": {"kind": "REC", "changes": [["add", 3]]}},
    ]
    with pytest.raises(ScenarioError, match="re-adds"):
        load(plan={"kind": "scripted", "events": events})


def test_static_crash_check_rejects_majority_crash():
    events = [{"label": "c", "at": 5, "crash": [1, 2]}]
    with pytest.raises(ScenarioError, match="failure-model"):
        load(plan={"kind": "scripted", "events": events})


def test_static_crash_check_accepts_removed_processes():
    events = [
        {"label": "r", "pid": 1, "at": 1,
         "op": {"kind": "REC", "changes": [["add", 4], ["add", 5], ["remove", 2], ["remove", 3]]}},
        {"label": "c", "after": "r", "crash": [2, 3]},
    ]
    sc = load(plan={"kind": "scripted", "events": events})
    assert verify(sc.build(0).run()).ok


def test_unknown_trigger_label_rejected():
    events = [{"label": "x", "pid": 1, "after": "nope", "op": {"kind": "RD"}}]
    with pytest.raises(ScenarioError, match="unknown label"):
        load(plan={"kind": "scripted", "events": events})


def test_st_expressions_resolve_per_seed():
    sc = Scenario.canned("liveness-endless-reconfig")
    sim = sc.build(3)
    st = sim.detector.schedule.stabilization_time
    assert 200 <= st <= 900
    assert sim.link_rules == (LinkRule(1, None, 0, st, st),)
    assert sim.detector.schedule.overrides[0].end == st + 1


def test_random_initial_size_is_seeded():
    sc = Scenario.canned("atomicity-fuzz")
    sizes = {len(sc.build(s).initial) for s in range(40)}
    assert sizes == {3, 4, 5, 6, 7}
    assert sc.build(11).initial == sc.build(11).initial


def test_theorem1_overrides():
    sc = Scenario.canned("theorem1").with_overrides(n=5, epochs=3)
    sim = sc.build(0)
    assert isinstance(sim.detector, SuspectForever)
    assert isinstance(sim.driver, EpochDriver) and sim.driver.n == 5
    assert sim.initial == {1, 2, 3, 4, 5}


def test_n_and_epochs_only_for_epoch_plans():
    with pytest.raises(ScenarioError):
        Scenario.canned("liveness-quiescent").with_overrides(n=5)


def test_scenario_file_round_trip(tmp_path):
    path = tmp_path / "s.yaml"
    path.write_text(yaml.safe_dump(BASE))
    sc = Scenario.resolve(str(path))
    assert sc.build(0).run().dumps() == load().build(0).run().dumps()


def test_bad_yaml(tmp_path):
    path = tmp_path / "s.yaml"
    path.write_text("name: [unclosed\n")
    with pytest.raises(ScenarioError, match="YAML"):
        Scenario.load(path)


def test_epoch_plan_first_epoch_matches_construction():
    sc = Scenario.canned("theorem1").with_overrides(epochs=1)
    trace = sc.build(0).run()
    recs = [r.payload["op"] for r in trace.of_kind("invoke") if r.payload["op"]["kind"] == "REC"]
    assert recs == [{"kind": "REC", "changes": [["add", 5], ["add", 6]]},
                    {"kind": "REC", "changes": [["remove", 2], ["remove", 3]]}]
    assert sorted(r.actor for r in trace.of_kind("crash")) == [2, 3]
    (epoch,) = trace.of_kind("epoch")
    assert epoch.payload["minimal_failure_precondition"] is True
