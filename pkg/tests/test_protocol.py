import pytest

from dynreg.core import BOTTOM, OK, Change
from dynreg.fd import Answer, DynamicEventuallyPerfect, FdSchedule, Override
from dynreg.protocol import (
    Ack,
    HelpReply,
    HelpRequest,
    Phase,
    Process,
    Propose,
    Proposed,
    Responded,
    Send,
    Update,
    WellFormednessError,
    key_of,
)
from dynreg.statemachine import ReplicaState, apply_decision

from conftest import RD, REC, WR, cfg, entry

TRUSTING = DynamicEventuallyPerfect(FdSchedule(0))


def state(ts=0, members=(1, 2, 3), value=BOTTOM, last=None):
    last_ops = {p: (0, BOTTOM) for p in members}
    last_ops.update(last or {})
    return ReplicaState(ts, value, cfg(members), last_ops)


def sends(proc, kind=None):
    return [e for e in proc.drain() if isinstance(e, Send) and (kind is None or isinstance(e.body, kind))]


def gathered(pid=1, op=None, sm=None):
    """A process whose gather has completed with only its own reply."""
    p = Process(pid, sm or state())
    p.invoke(op or WR(5))
    p.on_help_reply(pid, HelpReply(p.op_num, p.my_op, p.op_num))
    p.awaiting.clear()
    p.drain()
    return p


def test_invoke_broadcasts_help_requests():
    p = Process(1, state())
    p.invoke(WR(5))
    out = sends(p, HelpRequest)
    assert p.op_num == 1 and p.phase is Phase.GATHERING
    assert sorted(s.dst for s in out) == [1, 2, 3]


def test_singleton_gather_completes_after_self_reply():
    p = Process(1, state(members=(1,)))
    p.invoke(RD())
    (req,) = sends(p, HelpRequest)
    p.on_help_request(1, req.body)
    (reply,) = sends(p, HelpReply)
    p.on_help_reply(1, reply.body)
    p.advance(TRUSTING, 0)
    assert p.phase is Phase.AGREE and p.pend


def test_invoke_while_pending_rejected():
    p = Process(1, state())
    p.invoke(RD())
    with pytest.raises(WellFormednessError):
        p.invoke(RD())


def test_gather_proceeds_on_reply():
    p = Process(1, state(members=(1, 2)))
    p.invoke(RD())
    p.awaiting = {2}
    p.on_help_reply(2, HelpReply(p.op_num, None, 0))
    assert p.gather_done(TRUSTING, 0)


def test_gather_proceeds_on_suspicion():
    fd = DynamicEventuallyPerfect(FdSchedule(100, overrides=(Override(1, 2, 0, 50, Answer.FAIL),)))
    p = Process(1, state(members=(1, 2)))
    p.invoke(RD())
    p.awaiting = {2}
    assert p.gather_done(fd, 10)


def test_gather_proceeds_when_peer_removed():
    p = Process(1, state(members=(1, 2)))
    p.invoke(RD())
    p.awaiting = {2}
    assert not p.gather_done(TRUSTING, 0)
    p.on_update(3, Update(ReplicaState(4, BOTTOM, cfg({1, 3}, {2}), {1: (0, None)}), None))
    assert p.gather_done(TRUSTING, 0)


def test_request_keeps_unperformed_ops():
    p = gathered()
    p.advance(TRUSTING, 0)
    (prop,) = [e for e in p.drain() if isinstance(e, Proposed)]
    assert prop.req == {entry(1, WR(5), 1)}


def test_request_filters_performed_ops():
    p = gathered(sm=state(last={2: (3, 7)}))
    p.ops.add(entry(2, RD(), 3))
    assert p.build_request() == {entry(1, WR(5), 1)}


def test_helped_operation_skips_proposing():
    p = gathered()
    p.sm = state(ts=1, value=5, last={1: (1, OK)})
    p.advance(TRUSTING, 0)
    out = p.drain()
    assert not any(isinstance(e, Proposed) for e in out)
    assert [e for e in out if isinstance(e, Responded)] == [Responded(WR(5), 1, OK)]


@pytest.mark.parametrize("local_ts,msg_ts,adopted", [(2, 5, True), (5, 2, False)])
def test_help_request_always_replied(local_ts, msg_ts, adopted):
    p = Process(2, state(ts=local_ts))
    p.pend = True
    p.on_help_request(1, HelpRequest(4, state(ts=msg_ts)))
    (reply,) = sends(p, HelpReply)
    assert reply.dst == 1 and reply.body.num == 4
    assert (p.sm.ts == msg_ts) is adopted
    assert p.pend is (not adopted)


def test_idle_process_replies_bottom():
    p = Process(2, state())
    p.on_help_request(1, HelpRequest(1, state()))
    (reply,) = sends(p, HelpReply)
    assert reply.body.op is None


def test_help_reply_with_matching_tag_is_merged():
    p = Process(1, state())
    p.invoke(RD())
    p.on_help_reply(2, HelpReply(p.op_num, WR(9), 4))
    assert entry(2, WR(9), 4) in p.ops


def test_stale_help_reply_cannot_enter_a_later_gather():
    p = Process(1, state())
    p.invoke(RD())
    first = p.op_num
    p.sm = state(ts=1, last={1: (1, BOTTOM)})
    p.on_help_reply(1, HelpReply(first, RD(), first))
    p.awaiting.clear()
    p.advance(TRUSTING, 0)
    assert p.phase is Phase.IDLE
    p.invoke(RD())
    p.on_help_reply(2, HelpReply(first, WR(3), 1))
    assert {e.invoker for e in p.ops} == {1}


def test_bottom_help_reply_recorded_then_filtered():
    p = gathered()
    p.ops.add(entry(2, None, 0))
    assert entry(2, None, 0) in p.ops
    assert p.build_request() == {entry(1, WR(5), 1)}


def test_propose_adopted_and_forwarded():
    p = Process(2, state(ts=3))
    r = frozenset({entry(1, WR(1))})
    p.on_propose(1, Propose(state(ts=3), r))
    out = p.drain()
    assert p.pend
    assert any(isinstance(e, Proposed) and e.req == r for e in out)
    assert sorted(e.dst for e in out if isinstance(e, Send)) == [1, 2, 3]


def test_propose_dropped_when_already_pending():
    p = Process(2, state(ts=3))
    p.pend = True
    p.on_propose(1, Propose(state(ts=3), frozenset()))
    assert p.drain() == []


def test_propose_from_the_future_skips_forward():
    p = Process(2, state(ts=1))
    p.on_propose(1, Propose(state(ts=4), frozenset()))
    out = p.drain()
    assert p.sm.ts == 4 and p.pend
    assert any(isinstance(e, Proposed) and e.key == key_of(state(ts=4)) for e in out)


def test_decide_applies_current_instance():
    p = gathered()
    p.advance(TRUSTING, 0)
    key = key_of(p.sm)
    p.on_decide(key, frozenset({entry(1, WR(5), 1)}))
    assert p.sm.ts == 1 and not p.pend
    p.advance(TRUSTING, 0)
    assert [e for e in p.drain() if isinstance(e, Responded)] == [Responded(WR(5), 1, OK)]


def test_stale_decide_discarded_and_replicas_stay_equal():
    a, b = Process(1, state()), Process(2, state())
    r0 = frozenset({entry(3, WR(1), 1)})
    r1 = frozenset({entry(3, WR(2), 2)})
    s1 = apply_decision(state(), r0)
    s2 = apply_decision(s1, r1)
    a.on_decide(key_of(a.sm), r0)
    a.on_decide(key_of(a.sm), r1)
    b.on_update(3, Update(s2, None))  # b skips forward past both decisions
    assert not b.on_decide((cfg({1, 2, 3}), 0), r0)
    assert a.sm == b.sm == s2


def reconfig_in_barrier():
    p = gathered(op=REC({Change.add(4)}))
    p.advance(TRUSTING, 0)
    p.on_decide(key_of(p.sm), frozenset({entry(1, REC({Change.add(4)}), 1)}))
    p.advance(TRUSTING, 0)
    p.drain()
    return p


def test_reconfig_waits_for_majority_acks():
    p = reconfig_in_barrier()
    assert p.phase is Phase.AWAIT_ACKS and p.ack_mem == {1, 2, 3, 4}
    for q in (2, 3):
        p.on_ack(q, Ack(p.op_num))
        p.advance(TRUSTING, 0)
        assert p.phase is Phase.AWAIT_ACKS
    p.on_ack(4, Ack(p.op_num))
    p.advance(TRUSTING, 0)
    assert p.phase is Phase.IDLE


def test_reconfig_released_by_newer_state():
    p = reconfig_in_barrier()
    newer = apply_decision(p.sm, frozenset({entry(2, RD(), 1)}))
    p.on_update(2, Update(newer, None))
    p.advance(TRUSTING, 0)
    assert p.phase is Phase.IDLE


def test_reads_and_writes_skip_the_barrier():
    p = gathered(op=RD(), sm=state(value=3))
    p.advance(TRUSTING, 0)
    p.drain()
    p.on_decide(key_of(p.sm), frozenset({entry(1, RD(), 1)}))
    p.advance(TRUSTING, 0)
    out = p.drain()
    assert not any(isinstance(e, Send) for e in out)
    assert Responded(RD(), 1, 3) in out


@pytest.mark.parametrize("ts,num,adopted,acked", [(5, 7, True, True), (0, 7, False, True),
                                                   (5, None, True, False)])
def test_update_handler(ts, num, adopted, acked):
    p = Process(2, state(ts=2))
    p.on_update(1, Update(state(ts=ts), num))
    assert (p.sm.ts == ts) is adopted
    acks = sends(p, Ack)
    assert bool(acks) is acked
    if acked:
        assert acks[0].body == Ack(num)


def test_idle_process_gossips_its_state():
    p = Process(3, state(ts=2))
    p.periodic_update()
    out = sends(p, Update)
    assert {s.dst for s in out} == {1, 2, 3}
    assert all(s.body.num is None and s.body.sm.ts == 2 for s in out)
