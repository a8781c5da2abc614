"""Deterministic discrete-event kernel.

Time is an integer tick. Several events may share a tick; they run in
(tick, insertion) order, so a run is a pure function of the scenario and the
seed. Each tick the kernel:

1. lets the driver (the adversary's workload/crash policy) act,
2. fires the periodic update when ``tick % period == 0``,
3. executes every queued event due at this tick,
4. re-checks gather waits, whose failure-detector answers depend on time.

Links are reliable, unordered and non-duplicating. Messages to or from a
crashed process are dropped. Consensus proposals travel like messages to the
pseudo-process ``"C"`` and decisions come back from it, so link rules apply to
them as well.
"""

from __future__ import annotations

import heapq
import itertools
import random
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Iterable, List, Optional, Set, Tuple, Union

from .consensus import ConsensusInstance, Key
from .core import (
    Change,
    ChangeKind,
    OpKind,
    Operation,
    ProcessId,
    Request,
    change_set_views,
    request_to_json,
)
from .fd import Detector
from .protocol import (
    Phase,
    PhaseChanged,
    Process,
    Proposed,
    Responded,
    Send,
    StateChanged,
)
from .statemachine import ReplicaState, apply_decision
from .trace import RunTrace

CONSENSUS = "C"
Endpoint = Union[ProcessId, str]


class AdversaryError(RuntimeError):
    """The adversary tried something the failure model forbids."""


@dataclass(frozen=True)
class LinkRule:
    """Slow down traffic from ``src`` to ``dst`` (``None`` matches anything).

    Traffic sent during ``[start, end)`` is delivered no earlier than
    ``release`` (``None`` = held forever). ``start`` and ``end`` may name a
    scripted event (``"@label"``), resolved when that event fires.
    """

    src: Optional[Endpoint] = None
    dst: Optional[Endpoint] = None
    start: Union[int, str] = 0
    end: Union[int, str, None] = None
    release: Optional[int] = None

    def to_json(self) -> dict:
        return {"src": self.src, "dst": self.dst, "start": self.start, "end": self.end,
                "release": self.release}


def key_to_json(key: Key) -> dict:
    cng, ts = key
    return {"ts": ts, "mem": sorted(cng.mem), "rem": sorted(cng.rem)}


def minority_ok(failed: Iterable[ProcessId], v_members: Set[ProcessId], p_join: Set[ProcessId],
                p_remove: Set[ProcessId]) -> bool:
    counted = len(set(failed) & (v_members | p_join))
    return 2 * counted < len(v_members - p_remove)


class Driver:
    """Adversary policy hook: workload invocations and crash injection."""

    def start(self, sim: "Simulation") -> None:
        pass

    def on_tick(self, sim: "Simulation") -> None:
        pass

    def on_respond(self, sim: "Simulation", pid: ProcessId, op: Operation, num: int) -> None:
        pass

    def exhausted(self, sim: "Simulation") -> bool:
        return True

    def header(self) -> dict:
        return {}


@dataclass
class Simulation:
    initial: FrozenSet[ProcessId]
    detector: Detector
    driver: Driver
    seed: int = 0
    delay_bound: int = 5
    period: int = 10
    budget: int = 5000
    link_rules: Tuple[LinkRule, ...] = ()
    enforce_minority: bool = True
    name: str = "adhoc"
    header_extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.initial:
            raise ValueError("initial membership must be non-empty")
        if self.delay_bound < 1:
            raise ValueError("delay_bound must be at least 1")
        self.rng = random.Random(self.seed)
        self.now = 0
        self.trace = RunTrace()
        self.sm0 = ReplicaState.initial(self.initial)
        self.procs: Dict[ProcessId, Process] = {}
        self.crashed: Dict[ProcessId, int] = {}
        self.detector.crashes = self.crashed
        self._queue: list = []
        self._seq = itertools.count()
        self._mid = itertools.count(1)
        self.held: List[tuple] = []
        self.instances: Dict[Key, ConsensusInstance] = {}
        self.labels: Dict[str, int] = {}
        self.ever_joined: Set[ProcessId] = set(self.initial)
        # V(t), P(t), F(t) bookkeeping
        self.v_changes: Set[Change] = {Change.add(p) for p in self.initial}
        self.pending_recs: Dict[Tuple[ProcessId, int], FrozenSet[Change]] = {}
        self.p_star_remove: Set[ProcessId] = set()
        self.invoked: Dict[Tuple[ProcessId, int], Operation] = {}
        self.responded: Set[Tuple[ProcessId, int]] = set()
        self.truncated = False
        for p in sorted(self.initial):
            self.proc(p)

    # -- membership views ----------------------------------------------------------

    def proc(self, pid: ProcessId) -> Process:
        p = self.procs.get(pid)
        if p is None:
            p = self.procs[pid] = Process(pid, self.sm0)
        return p

    def alive(self, pid: ProcessId) -> bool:
        return pid not in self.crashed

    @property
    def V(self):
        return change_set_views(self.v_changes)

    @property
    def P(self):
        changes: Set[Change] = set()
        for cs in self.pending_recs.values():
            changes |= cs
        return change_set_views(changes)

    def failure_clause(self, pid: ProcessId,
                       extra_pending: Iterable[Change] = ()) -> Optional[str]:
        """Which failure-model clause would permit crashing ``pid`` now (None = none)."""
        V = self.V
        if pid in V.remove:
            return "reconfigurable"
        P = self.P
        p_join, p_remove = set(P.join), set(P.remove)
        extra = change_set_views(extra_pending)
        p_join |= extra.join
        p_remove |= extra.remove
        if minority_ok(set(self.crashed) | {pid}, set(V.members), p_join, p_remove):
            return "minority"
        return None

    def check_failure_allowed(self, pid: ProcessId) -> bool:
        return self.failure_clause(pid) is not None

    def reconfig_allowed(self, changes: Iterable[Change]) -> bool:
        """Would invoking a reconfig with ``changes`` keep the minority condition?"""
        if not self.enforce_minority:
            return True
        V, P = self.V, self.P
        extra = change_set_views(changes)
        return minority_ok(self.crashed, set(V.members), set(P.join) | extra.join,
                           set(P.remove) | extra.remove)

    def is_active_candidate(self, pid: ProcessId) -> bool:
        return (self.alive(pid) and pid not in self.p_star_remove
                and pid not in self.V.remove)

    # -- adversary actions ---------------------------------------------------------

    def invoke(self, pid: ProcessId, op: Operation) -> int:
        proc = self.proc(pid)
        if not self.alive(pid):
            raise AdversaryError(f"p{pid} is crashed and cannot invoke")
        if op.kind is OpKind.REC:
            if not self.reconfig_allowed(op.changes):
                raise AdversaryError(f"reconfig {op} by p{pid} would break the minority condition")
            removed = self.V.remove | self.P.remove
            readd = [c.target for c in op.changes if c.kind is ChangeKind.ADD and c.target in removed]
            if readd:
                raise AdversaryError(f"p{readd[0]} was removed and cannot be added again")
        proc.invoke(op)
        num = proc.op_num
        self.invoked[(pid, num)] = op
        if op.kind is OpKind.REC:
            self.pending_recs[(pid, num)] = op.changes
            self.p_star_remove |= change_set_views(op.changes).remove
        self.trace.add(self.now, "invoke", pid, {"op": op.to_json(), "num": num})
        self._flush(proc)
        self._advance(proc)
        return num

    def crash(self, pid: ProcessId, check: bool = True) -> None:
        if not self.alive(pid):
            return
        clause = self.failure_clause(pid)
        if check and self.enforce_minority and clause is None:
            raise AdversaryError(f"crashing p{pid} at tick {self.now} violates the failure model")
        self.crashed[pid] = self.now
        self.trace.add(self.now, "crash", pid, {"clause": clause})

    def mark(self, label: str) -> None:
        self.labels.setdefault(label, self.now)

    # -- event plumbing ------------------------------------------------------------

    def _push(self, tick: int, event: tuple) -> None:
        heapq.heappush(self._queue, (tick, next(self._seq), event))

    def _release_tick(self, src: Endpoint, dst: Endpoint, base_delay: int) -> Optional[int]:
        tick = self.now + base_delay
        for rule in self.link_rules:
            if rule.src is not None and rule.src != src:
                continue
            if rule.dst is not None and rule.dst != dst:
                continue
            start = self._resolve(rule.start)
            end = self._resolve(rule.end)
            if start is None or self.now < start:
                continue
            if end is not None and self.now >= end:
                continue
            if rule.release is None:
                return None
            tick = max(tick, rule.release + base_delay)
        return tick

    def _resolve(self, bound: Union[int, str, None]) -> Optional[int]:
        if isinstance(bound, str):
            return self.labels.get(bound.lstrip("@"))
        return bound

    def _delay(self, minimum: int = 1) -> int:
        return self.rng.randint(minimum, self.delay_bound)

    def _flush(self, proc: Process) -> None:
        pid = proc.pid
        for eff in proc.drain():
            if isinstance(eff, Send):
                mid = next(self._mid)
                body = eff.body
                info = {"id": mid, "to": eff.dst, "msg": body.kind}
                sm = getattr(body, "sm", None)
                if sm is not None:
                    info["ts"] = sm.ts
                self.trace.add(self.now, "send", pid, info)
                tick = self._release_tick(pid, eff.dst, self._delay())
                event = ("msg", pid, eff.dst, body, mid)
                if tick is None:
                    self.held.append(event)
                else:
                    self._push(tick, event)
            elif isinstance(eff, Proposed):
                tick = self._release_tick(pid, CONSENSUS, self._delay())
                event = ("cpropose", pid, eff.key, eff.req, eff.sm)
                if tick is None:
                    self.held.append(event)
                else:
                    self._push(tick, event)
            elif isinstance(eff, Responded):
                self._on_respond(pid, eff)
            elif isinstance(eff, StateChanged):
                self.trace.add(self.now, "sm", pid, {"via": eff.via, "sm": eff.sm.to_json()})
                if pid in eff.sm.cng.mem:
                    self.ever_joined.add(pid)
            elif isinstance(eff, PhaseChanged):
                self.trace.add(self.now, "phase", pid, {"phase": eff.phase.value})

    def _on_respond(self, pid: ProcessId, eff: Responded) -> None:
        op_id = (pid, eff.num)
        self.responded.add(op_id)
        self.trace.add(self.now, "respond", pid,
                       {"op": eff.op.to_json(), "num": eff.num, "result": eff.result})
        changes = self.pending_recs.pop(op_id, None)
        if changes is not None:
            self.v_changes |= changes
        self.driver.on_respond(self, pid, eff.op, eff.num)

    def _advance(self, proc: Process) -> None:
        if not self.alive(proc.pid):
            return
        proc.advance(self.detector, self.now)
        self._flush(proc)

    def _notify_decision(self, inst: ConsensusInstance, pid: ProcessId) -> None:
        tick = self._release_tick(CONSENSUS, pid, self._delay())
        event = ("notify", pid, inst.key)
        if tick is None:
            self.held.append(event)
        else:
            self._push(tick, event)

    def _majority_alive(self, key: Key) -> bool:
        mem = key[0].mem
        alive = sum(1 for p in mem if self.alive(p))
        return alive >= len(mem) // 2 + 1

    # -- event handlers ------------------------------------------------------------

    def _execute(self, event: tuple) -> None:
        kind = event[0]
        if kind == "msg":
            _, src, dst, body, mid = event
            info = {"id": mid, "from": src, "msg": body.kind}
            if not self.alive(dst) or not self.alive(src):
                info["why"] = "crashed"
                self.trace.add(self.now, "drop", dst, info)
                return
            self.trace.add(self.now, "deliver", dst, info)
            proc = self.proc(dst)
            proc.on_message(src, body)
            self._flush(proc)
            self._advance(proc)
        elif kind == "cpropose":
            _, pid, key, req, sm = event
            self._on_consensus_propose(pid, key, req, sm)
        elif kind == "cdecide":
            self._on_consensus_decide(event[1])
        elif kind == "notify":
            _, pid, key = event
            kj = key_to_json(key)
            if not self.alive(pid):
                return
            if not self._majority_alive(key):
                self.trace.add(self.now, "drop", pid, {"key": kj, "msg": "decide",
                                                        "why": "no-live-majority"})
                return
            inst = self.instances[key]
            self.trace.add(self.now, "notify", pid, {"key": kj})
            proc = self.proc(pid)
            proc.on_decide(key, inst.decision)
            self._flush(proc)
            self._advance(proc)
        else:  # pragma: no cover
            raise ValueError(f"unknown event {kind}")

    def _on_consensus_propose(self, pid: ProcessId, key: Key, req: Request,
                              sm: ReplicaState) -> None:
        kj = key_to_json(key)
        if not self.alive(pid):
            return
        if pid not in key[0].mem:
            self.trace.add(self.now, "ignored", pid, {"key": kj, "why": "not-a-member"})
            return
        inst = self.instances.get(key)
        if inst is None:
            inst = self.instances[key] = ConsensusInstance(key)
            inst.pre_state = sm
        self.trace.add(self.now, "propose", pid, {"key": kj, "req": request_to_json(req)})
        gate = inst.propose(pid, req, self.now)
        if gate:
            self._push(self.now + self.rng.randint(0, self.delay_bound), ("cdecide", key))
        elif inst.decided and self._majority_alive(key):
            self._notify_decision(inst, pid)

    def _on_consensus_decide(self, key: Key) -> None:
        inst = self.instances[key]
        req = inst.decide(self.now)
        post = apply_decision(inst.pre_state, req)
        self.trace.add(self.now, "decide", CONSENSUS, {
            "key": key_to_json(key),
            "req": request_to_json(req),
            "post": post.to_json(),
            "proposers": sorted(inst.proposals),
        })
        for p in sorted(key[0].mem):
            if self.alive(p):
                self._notify_decision(inst, p)

    # -- main loop -----------------------------------------------------------------

    def quiescent(self) -> bool:
        if not self.driver.exhausted(self):
            return False
        for pid, proc in self.procs.items():
            if proc.phase is not Phase.IDLE and self.is_active_candidate(pid):
                return False
        return True

    def tick(self) -> None:
        self.driver.on_tick(self)
        if self.period and self.now > 0 and self.now % self.period == 0:
            for pid in sorted(self.procs):
                if self.alive(pid) and pid in self.ever_joined:
                    proc = self.procs[pid]
                    proc.periodic_update()
                    self._flush(proc)
        while self._queue and self._queue[0][0] <= self.now:
            _, _, event = heapq.heappop(self._queue)
            self._execute(event)
        for pid in sorted(self.procs):
            proc = self.procs[pid]
            if proc.phase is Phase.GATHERING and self.alive(pid):
                self._advance(proc)

    def run(self) -> RunTrace:
        header = {
            "scenario": self.name,
            "seed": self.seed,
            "initial": sorted(self.initial),
            "fd": self.detector.kind,
            "delay_bound": self.delay_bound,
            "period": self.period,
            "budget": self.budget,
            "links": [r.to_json() for r in self.link_rules],
        }
        header.update(self.driver.header())
        header.update(self.header_extra)
        self.trace.add(0, "header", "-", header)
        self.driver.start(self)
        reason = "budget"
        while self.now <= self.budget:
            self.tick()
            if self.quiescent():
                reason = "quiescent"
                break
            self.now += 1
        else:
            self.now = self.budget
            self.truncated = True
        self.trace.add(self.now, "end", "-", {"reason": reason, "held": len(self.held)})
        return self.trace
