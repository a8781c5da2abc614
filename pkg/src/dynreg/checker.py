"""Post-hoc verification of a RunTrace.

Everything here reads the trace only, so a stored trace replays to the same
verdict as the live run. The white-box atomicity check orders operations by
the decided requests recorded in the trace; ``blackbox_linearizable`` sees only
invocations and responses and searches for a legal order on its own.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Any, Dict, Iterable, List, Optional, Sequence, Set, Tuple

from .core import BOTTOM, OK, OpId, Operation, OpKind, ProcessId, change_set_views, request_from_json
from .fd import Answer, DynamicEventuallyPerfect, SuspectForever, schedule_from_json
from .statemachine import DecisionError, ReplicaState, apply_decision, intra_request_order
from .trace import RunTrace

BLACKBOX_CAP = 12
CHECKS = ("atomicity", "waitfree", "invariants", "fd")


@dataclass
class OpRecord:
    pid: ProcessId
    num: int
    op: Operation
    invoked_at: int  # record index, a total order consistent with ticks
    invoke_tick: int
    responded_at: Optional[int] = None
    respond_tick: Optional[int] = None
    result: Any = None

    @property
    def op_id(self) -> OpId:
        return (self.pid, self.num)

    @property
    def complete(self) -> bool:
        return self.responded_at is not None

    def describe(self) -> dict:
        out = {"pid": self.pid, "num": self.num, "op": str(self.op), "invoke_tick": self.invoke_tick}
        if self.complete:
            out["respond_tick"] = self.respond_tick
            out["result"] = self.result
        return out


@dataclass
class History:
    ops: List[OpRecord] = field(default_factory=list)

    @classmethod
    def from_trace(cls, trace: RunTrace) -> "History":
        h = cls()
        by_id: Dict[OpId, OpRecord] = {}
        for i, r in enumerate(trace):
            if r.kind == "invoke":
                rec = OpRecord(r.actor, r.payload["num"], Operation.from_json(r.payload["op"]),
                               i, r.tick)
                by_id[rec.op_id] = rec
                h.ops.append(rec)
            elif r.kind == "respond":
                rec = by_id.get((r.actor, r.payload["num"]))
                if rec is None or rec.complete:
                    raise ValueError(f"record {i}: response without a matching pending invocation")
                rec.responded_at, rec.respond_tick = i, r.tick
                rec.result = r.payload["result"]
        return h

    def by_id(self) -> Dict[OpId, OpRecord]:
        return {o.op_id: o for o in self.ops}

    def check_well_formed(self) -> List[dict]:
        """Each process alternates invoke and respond, with increasing numbers."""
        out = []
        last: Dict[ProcessId, OpRecord] = {}
        for o in sorted(self.ops, key=lambda o: o.invoked_at):
            prev = last.get(o.pid)
            if prev is not None and (not prev.complete or prev.responded_at > o.invoked_at):
                out.append({"kind": "ill-formed", "first": prev.describe(), "second": o.describe()})
            if prev is not None and o.num != prev.num + 1:
                out.append({"kind": "op-number-gap", "first": prev.describe(), "second": o.describe()})
            last[o.pid] = o
        return out


@dataclass
class CheckResult:
    ok: bool
    witness: Any = None
    details: Dict[str, Any] = field(default_factory=dict)

    def to_json(self) -> dict:
        out = {"ok": self.ok}
        if self.witness is not None:
            out["witness"] = self.witness
        out.update(self.details)
        return out


# -- sigma ---------------------------------------------------------------------------


def decide_records(trace: RunTrace) -> List[dict]:
    return [r.payload for r in trace.of_kind("decide")]


def build_sigma(trace: RunTrace) -> List[Tuple[ProcessId, Operation, int]]:
    """Decided requests in timestamp order, each in the intra-request order.

    Raises ``ValueError`` when an operation was decided twice.
    """
    decides = sorted(decide_records(trace), key=lambda d: d["key"]["ts"])
    sigma = []
    seen: Set[OpId] = set()
    for d in decides:
        for e in intra_request_order(request_from_json(d["req"])):
            if (e.invoker, e.num) in seen:
                raise ValueError(f"p{e.invoker} op #{e.num} decided twice")
            seen.add((e.invoker, e.num))
            sigma.append((e.invoker, e.op, e.num))
    return sigma


def check_atomicity(h: History, sigma: Sequence[Tuple[ProcessId, Operation, int]]) -> CheckResult:
    ops = h.by_id()
    pos: Dict[OpId, int] = {}
    for i, (pid, op, num) in enumerate(sigma):
        rec = ops.get((pid, num))
        if rec is None:
            return CheckResult(False, {"kind": "never-invoked", "pid": pid, "num": num})
        if rec.op != op:
            return CheckResult(False, {"kind": "op-mismatch", "op": rec.describe(), "decided": str(op)})
        pos[(pid, num)] = i
    for o in h.ops:
        if o.complete and o.op_id not in pos:
            return CheckResult(False, {"kind": "completed-not-linearized", "op": o.describe()})
    # (a) real-time order
    done = sorted((o for o in h.ops if o.complete), key=lambda o: o.responded_at)
    for a in done:
        for b in h.ops:
            if b.invoked_at > a.responded_at and b.op_id in pos and pos[b.op_id] < pos[a.op_id]:
                return CheckResult(False, {"kind": "real-time-order", "before": a.describe(),
                                           "after": b.describe()})
    # (b) + (c) sequential register semantics and matching responses
    value = BOTTOM
    for pid, op, num in sigma:
        if op.kind is OpKind.WR:
            value = op.value
            expected = OK
        elif op.kind is OpKind.RD:
            expected = value
        else:
            expected = OK
        rec = ops[(pid, num)]
        if rec.complete and rec.result != expected:
            return CheckResult(False, {"kind": "wrong-result", "op": rec.describe(),
                                       "expected": expected})
    return CheckResult(True, details={"sigma_length": len(sigma)})


def blackbox_linearizable(h: History, cap: int = BLACKBOX_CAP) -> Optional[bool]:
    """Search for any legal sequential order; ``None`` when the history exceeds ``cap``.

    Pending writes may or may not have taken effect; pending reads and
    reconfigurations constrain nothing and are dropped.
    """
    ops = [o for o in h.ops if o.complete or o.op.kind is OpKind.WR]
    if len(ops) > cap:
        return None
    n = len(ops)
    required = sum(1 << i for i, o in enumerate(ops) if o.complete)
    # prec[i]: ops that must come before op i (responded before i was invoked)
    prec = [0] * n
    for i, b in enumerate(ops):
        for j, a in enumerate(ops):
            if a.complete and a.responded_at < b.invoked_at:
                prec[i] |= 1 << j

    @lru_cache(maxsize=None)
    def search(done: int, value) -> bool:
        if done & required == required:
            return True
        for i, o in enumerate(ops):
            bit = 1 << i
            if done & bit or prec[i] & ~done:
                continue
            if o.op.kind is OpKind.WR:
                if o.complete and o.result != OK:
                    continue
                if search(done | bit, o.op.value):
                    return True
            elif o.op.kind is OpKind.RD:
                if o.result == value and search(done | bit, value):
                    return True
            else:
                if o.result == OK and search(done | bit, value):
                    return True
        return False

    return search(0, BOTTOM)


# -- wait-freedom --------------------------------------------------------------------


def removal_targets(h: History) -> Set[ProcessId]:
    """P(*).remove: every process named in a removal of any invoked reconfig."""
    out: Set[ProcessId] = set()
    for o in h.ops:
        if o.op.kind is OpKind.REC:
            out |= change_set_views(o.op.changes).remove
    return out


def crashed_set(trace: RunTrace) -> Dict[ProcessId, int]:
    return {r.actor: r.tick for r in trace.of_kind("crash")}


def end_reason(trace: RunTrace) -> str:
    for r in reversed(trace.records):
        if r.kind == "end":
            return r.payload["reason"]
    return "incomplete"


def check_wait_freedom(trace: RunTrace, h: History,
                       expected_pending: Iterable[ProcessId] = ()) -> CheckResult:
    crashed = crashed_set(trace)
    removed = removal_targets(h)
    expected = set(expected_pending)
    reason = end_reason(trace)
    pending, excused = [], []
    for o in h.ops:
        if o.complete:
            continue
        if o.pid in crashed or o.pid in removed:
            continue
        (excused if o.pid in expected else pending).append(o.describe())
    details: Dict[str, Any] = {"end": reason}
    if excused:
        details["expected_pending"] = excused
    if not pending:
        return CheckResult(True, details=details)
    label = "pending-at-budget" if reason == "budget" else "hang"
    return CheckResult(False, {"kind": label, "ops": pending}, details)


# -- replica, consensus and membership invariants ------------------------------------


def check_replica_invariants(trace: RunTrace) -> List[dict]:
    out: List[dict] = []
    header = trace.header
    sm0 = ReplicaState.initial(header.get("initial", []))

    # equal ts => equal state, over every snapshot (adoptions, decisions, decided posts)
    by_ts: Dict[int, Tuple[str, Any]] = {0: (sm0.canonical(), "initial")}
    last_per_proc: Dict[Any, dict] = {}

    def see(sm_json: dict, where: Any) -> None:
        canon = ReplicaState.from_json(sm_json).canonical()
        prev = by_ts.setdefault(sm_json["ts"], (canon, where))
        if prev[0] != canon:
            out.append({"kind": "equal-ts-differ", "ts": sm_json["ts"], "first": prev[1],
                        "second": where})

    def monotone(a: dict, b: dict, where: Any) -> None:
        old = {p: n for p, n, _ in a["lastOps"]}
        for p, n, _ in b["lastOps"]:
            if n < old.get(p, 0):
                out.append({"kind": "lastops-decreased", "pid": p, "from": old[p], "to": n,
                            "at": where})
        dropped = set(old) - {p for p, _, _ in b["lastOps"]}
        if dropped:
            out.append({"kind": "lastops-dropped", "pids": sorted(dropped), "at": where})

    for i, r in enumerate(trace):
        if r.kind == "sm":
            where = {"record": i, "pid": r.actor, "tick": r.tick}
            see(r.payload["sm"], where)
            prev = last_per_proc.get(r.actor)
            if prev is not None:
                if r.payload["sm"]["ts"] <= prev["ts"]:
                    out.append({"kind": "ts-not-increasing", "at": where})
                monotone(prev, r.payload["sm"], where)
            last_per_proc[r.actor] = r.payload["sm"]
        elif r.kind == "decide":
            see(r.payload["post"], {"record": i, "decide_ts": r.payload["key"]["ts"]})

    # the decided chain: contiguous ts, each post the deterministic successor
    decides = sorted(decide_records(trace), key=lambda d: d["key"]["ts"])
    state = sm0
    for k, d in enumerate(decides):
        ts = d["key"]["ts"]
        if ts != k:
            out.append({"kind": "decision-chain-gap", "expected_ts": k, "got_ts": ts})
            break
        if sorted(state.cng.mem) != d["key"]["mem"] or sorted(state.cng.rem) != d["key"]["rem"]:
            out.append({"kind": "decision-key-mismatch", "ts": ts})
            break
        try:
            nxt = apply_decision(state, request_from_json(d["req"]))
        except DecisionError as exc:
            out.append({"kind": "decided-twice", "ts": ts, "detail": str(exc)})
            break
        if nxt.canonical() != ReplicaState.from_json(d["post"]).canonical():
            out.append({"kind": "decision-post-mismatch", "ts": ts})
            break
        monotone(state.to_json(), nxt.to_json(), {"decide_ts": ts})
        # membership persistence: a member leaves only by being removed
        gone = state.cng.mem - nxt.cng.mem - nxt.cng.rem
        if gone:
            out.append({"kind": "member-vanished", "pids": sorted(gone), "decide_ts": ts})
        state = nxt

    out.extend(check_membership_views(trace))
    out.extend(check_consensus(trace))
    return out


def check_membership_views(trace: RunTrace, literal: bool = False) -> List[dict]:
    """V(t).members within the latest decided membership, V(t).remove outside it,
    and a live majority of that membership at every step.

    A removal is decided before its reconfig responds, so in between the removed
    process is still in V(t).members but already gone from the decided state.
    By default members with a pending removal are exempt; ``literal=True``
    drops the exemption and reports that window too.
    """
    out: List[dict] = []
    header = trace.header
    initial = set(header.get("initial", []))
    v_join, v_remove = set(initial), set()
    mem = set(initial)
    crashed: Set[ProcessId] = set()
    pending_recs: Dict[OpId, Operation] = {}
    reported = set()

    def check(i: int, tick: int) -> None:
        members = v_join - v_remove
        if not literal:
            for op in pending_recs.values():
                members -= change_set_views(op.changes).remove
        if not members <= mem and "members" not in reported:
            reported.add("members")
            out.append({"kind": "view-members-not-in-state", "record": i, "tick": tick,
                        "missing": sorted(members - mem)})
        if mem & v_remove and "remove" not in reported:
            reported.add("remove")
            out.append({"kind": "removed-still-member", "record": i, "tick": tick,
                        "pids": sorted(mem & v_remove)})
        live = len(mem - crashed)
        if mem and 2 * live <= len(mem) and "majority" not in reported:
            reported.add("majority")
            out.append({"kind": "no-live-majority", "record": i, "tick": tick,
                        "mem": sorted(mem), "crashed": sorted(crashed & mem)})

    for i, r in enumerate(trace):
        if r.kind == "invoke":
            op = Operation.from_json(r.payload["op"])
            if op.kind is OpKind.REC:
                pending_recs[(r.actor, r.payload["num"])] = op
        elif r.kind == "respond":
            op = pending_recs.pop((r.actor, r.payload["num"]), None)
            if op is not None:
                views = change_set_views(op.changes)
                v_join |= views.join
                v_remove |= views.remove
                check(i, r.tick)
        elif r.kind == "decide":
            cng = r.payload["post"]["cng"]
            mem = set(cng["mem"])
            check(i, r.tick)
        elif r.kind == "crash":
            crashed.add(r.actor)
            check(i, r.tick)
    return out


def check_consensus(trace: RunTrace) -> List[dict]:
    """Agreement, validity and the majority gate, per instance key."""
    out: List[dict] = []
    proposals: Dict[Tuple, Dict[Any, Any]] = {}
    decided: Dict[Tuple, Any] = {}

    def kid(key: dict) -> Tuple:
        return (key["ts"], tuple(key["mem"]), tuple(key["rem"]))

    for r in trace:
        if r.kind == "propose":
            k = kid(r.payload["key"])
            props = proposals.setdefault(k, {})
            if r.actor in props:
                out.append({"kind": "double-proposal", "key": r.payload["key"], "pid": r.actor})
            if r.actor not in r.payload["key"]["mem"]:
                out.append({"kind": "non-member-proposal", "key": r.payload["key"], "pid": r.actor})
            props[r.actor] = r.payload["req"]
        elif r.kind == "decide":
            k = kid(r.payload["key"])
            req = r.payload["req"]
            if k in decided:
                out.append({"kind": "agreement", "key": r.payload["key"]})
                continue
            decided[k] = req
            props = proposals.get(k, {})
            if req not in props.values():
                out.append({"kind": "validity", "key": r.payload["key"]})
            mem = r.payload["key"]["mem"]
            voters = [p for p in props if p in mem]
            if 2 * len(voters) <= len(mem):
                out.append({"kind": "majority-gate", "key": r.payload["key"],
                            "proposers": sorted(voters)})
    return out


# -- failure-detector contract -------------------------------------------------------


def check_fd_contract(trace: RunTrace) -> CheckResult:
    """Re-derive every detector answer on the run's full time grid."""
    header = trace.header
    raw = header.get("fd_schedule")
    if raw is None:
        return CheckResult(False, {"kind": "no-schedule-in-trace"})
    crashes = crashed_set(trace)
    h = History.from_trace(trace)
    horizon = max((r.tick for r in trace), default=0)
    procs = sorted({r.actor for r in trace if isinstance(r.actor, int)} | set(header["initial"]))
    added = set(header["initial"])
    for o in h.ops:
        if o.op.kind is OpKind.REC and o.complete:
            added |= change_set_views(o.op.changes).join
    if raw["kind"] == SuspectForever.kind:
        det = SuspectForever(frozenset(raw["victims"]), crashes)
        return CheckResult(True, details={"kind": det.kind, "note": "accuracy not promised"})
    sched = schedule_from_json(raw)
    det = DynamicEventuallyPerfect(sched, crashes)
    queries = 0
    for q in procs:
        for t in range(horizon + 1):
            for target in procs:
                queries += 1
                ans = det.query(q, target, t)
                t_f = crashes.get(target)
                if t_f is not None and t >= t_f + sched.completeness_lag and ans is not Answer.FAIL:
                    return CheckResult(False, {"kind": "completeness", "querier": q,
                                               "target": target, "time": t})
                if (t_f is None and target in added and t > sched.stabilization_time
                        and ans is not Answer.OK):
                    return CheckResult(False, {"kind": "accuracy", "querier": q,
                                               "target": target, "time": t})
    return CheckResult(True, details={"queries": queries})


# -- scenario expectations -----------------------------------------------------------


def check_expectations(trace: RunTrace, h: History) -> Dict[str, CheckResult]:
    expect = trace.header.get("expect") or {}
    out: Dict[str, CheckResult] = {}
    if "pending" in expect:
        bad = [p for p in expect["pending"]
               if not any(o.pid == p and not o.complete for o in h.ops)]
        out["pending"] = CheckResult(not bad and end_reason(trace) == "budget",
                                     {"completed": bad} if bad else None,
                                     {"end": end_reason(trace)})
    if "no_deliveries_from" in expect:
        senders = set(expect["no_deliveries_from"])
        hits = [{"tick": r.tick, "to": r.actor, "from": r.payload["from"]}
                for r in trace.of_kind("deliver") if r.payload.get("from") in senders]
        proposals = [{"tick": r.tick, "pid": r.actor} for r in trace.of_kind("propose")
                     if r.actor in senders]
        out["no_deliveries_from"] = CheckResult(not hits and not proposals,
                                                (hits + proposals)[:1] or None,
                                                {"deliveries": len(hits)})
    if "crash_clause" in expect:
        want = expect["crash_clause"]
        crashes = list(trace.of_kind("crash"))
        bad = [{"pid": r.actor, "tick": r.tick, "clause": r.payload["clause"]}
               for r in crashes if r.payload["clause"] != want]
        out["crash_clause"] = CheckResult(not bad, bad[:1] or None, {"crashes": len(crashes)})
    epochs_done = _epochs_completed(trace, h)
    if expect.get("epochs_complete"):
        want = trace.header.get("epochs")
        out["epochs_complete"] = CheckResult(epochs_done == want, None,
                                             {"completed": epochs_done, "planned": want})
    if "epochs_min" in expect:
        out["epochs_min"] = CheckResult(epochs_done >= expect["epochs_min"], None,
                                        {"completed": epochs_done})
    if "helped_within" in expect:
        out["helped_within"] = _helped_within(trace, h, **expect["helped_within"])
    if "completes" in expect:
        bad = [o.describe() for o in h.ops if o.pid in expect["completes"] and not o.complete]
        out["completes"] = CheckResult(not bad, bad[:1] or None)
    return out


def _epochs_completed(trace: RunTrace, h: History) -> int:
    slow = trace.header.get("slow")
    recs = sum(1 for o in h.ops if o.op.kind is OpKind.REC and o.complete and o.pid != slow)
    return recs // 2


def _helped_within(trace: RunTrace, h: History, pid: ProcessId, decisions: int) -> CheckResult:
    st = trace.header["fd_schedule"]["stabilization_time"]
    first_after = next((i for i, r in enumerate(trace) if r.kind == "invoke" and r.tick > st), None)
    target = next((o for o in h.ops if o.pid == pid), None)
    if target is None:
        return CheckResult(False, {"kind": "no-operation", "pid": pid})
    if not target.complete:
        return CheckResult(False, {"kind": "never-completed", "op": target.describe()})
    details = {"stabilization_time": st, "respond_tick": target.respond_tick}
    if first_after is None or target.responded_at < first_after:
        details["decisions"] = 0
        return CheckResult(True, details=details)
    n = sum(1 for r in trace.records[first_after:target.responded_at] if r.kind == "decide")
    details["decisions"] = n
    details["first_post_st_invoke_tick"] = trace.records[first_after].tick
    return CheckResult(n <= decisions, None if n <= decisions else {"decisions": n}, details)


# -- verdict -------------------------------------------------------------------------


@dataclass
class Verdict:
    scenario: str
    seed: Any
    end: str
    checks: Dict[str, CheckResult]
    expectations: Dict[str, CheckResult]

    @property
    def ok(self) -> bool:
        return (all(c.ok for c in self.checks.values())
                and all(c.ok for c in self.expectations.values()))

    def failures(self) -> List[str]:
        return ([k for k, c in self.checks.items() if not c.ok]
                + [f"expect:{k}" for k, c in self.expectations.items() if not c.ok])

    def to_json(self) -> dict:
        return {
            "scenario": self.scenario,
            "seed": self.seed,
            "end": self.end,
            "ok": self.ok,
            "checks": {k: c.to_json() for k, c in self.checks.items()},
            "expectations": {k: c.to_json() for k, c in self.expectations.items()},
        }


def verify(trace: RunTrace, checks: Optional[Iterable[str]] = None) -> Verdict:
    """Run the selected checks (default: the scenario's own list) on a trace."""
    header = trace.header
    expect = header.get("expect") or {}
    selected = list(checks) if checks is not None else list(expect.get("checks", CHECKS[:3]))
    for c in selected:
        if c not in CHECKS:
            raise ValueError(f"unknown check {c!r}")
    h = History.from_trace(trace)
    results: Dict[str, CheckResult] = {}
    if "atomicity" in selected:
        results["atomicity"] = _atomicity(trace, h)
    if "waitfree" in selected:
        results["waitfree"] = check_wait_freedom(trace, h, expect.get("pending", ()))
    if "invariants" in selected:
        violations = h.check_well_formed() + check_replica_invariants(trace)
        results["invariants"] = CheckResult(not violations, violations[:1] or None,
                                            {"violations": len(violations)})
    if "fd" in selected:
        results["fd"] = check_fd_contract(trace)
    return Verdict(header.get("scenario", "?"), header.get("run_seed", header.get("seed")),
                   end_reason(trace), results, check_expectations(trace, h))


def _atomicity(trace: RunTrace, h: History) -> CheckResult:
    try:
        sigma = build_sigma(trace)
    except ValueError as exc:
        return CheckResult(False, {"kind": "decided-twice", "detail": str(exc)})
    white = check_atomicity(h, sigma)
    black = blackbox_linearizable(h)
    white.details["blackbox"] = "skipped" if black is None else ("pass" if black else "fail")
    if black is not None and black != white.ok:
        white.details["disagreement"] = True
        if white.ok:
            return CheckResult(False, {"kind": "oracle-disagreement"}, white.details)
    return white
