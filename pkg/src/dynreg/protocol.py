"""Per-process automaton: gather, agree-and-perform, message handlers.

Handlers run to completion. The algorithm's wait points are reified as
``Phase`` values whose predicates :meth:`Process.advance` re-checks after every
event touching the process. Side effects (sends, consensus proposals,
responses) are queued on ``Process.effects`` for the kernel to drain.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import FrozenSet, List, Optional, Set, Union

from .consensus import Key
from .core import Entry, OpKind, Operation, ProcessId, Request, Result
from .fd import Detector
from .statemachine import ReplicaState, apply_decision


class Phase(str, enum.Enum):
    IDLE = "idle"
    GATHERING = "gathering"
    AGREE = "agree"
    AWAIT_ACKS = "await-acks"


@dataclass(frozen=True)
class HelpRequest:
    num: int
    sm: ReplicaState

    kind = "helpRequest"


@dataclass(frozen=True)
class HelpReply:
    num: int  # echoed tag of the request being answered
    op: Optional[Operation]
    op_num: int

    kind = "helpReply"


@dataclass(frozen=True)
class Propose:
    sm: ReplicaState
    req: Request

    kind = "propose"


@dataclass(frozen=True)
class Update:
    sm: ReplicaState
    num: Optional[int]

    kind = "update"


@dataclass(frozen=True)
class Ack:
    num: int

    kind = "ACK"


Body = Union[HelpRequest, HelpReply, Propose, Update, Ack]


# --- effects -----------------------------------------------------------------

@dataclass(frozen=True)
class Send:
    dst: ProcessId
    body: Body


@dataclass(frozen=True)
class Proposed:
    key: Key
    req: Request
    sm: ReplicaState


@dataclass(frozen=True)
class Responded:
    op: Operation
    num: int
    result: Result


@dataclass(frozen=True)
class StateChanged:
    sm: ReplicaState
    via: str  # "decide" or "adopt"


@dataclass(frozen=True)
class PhaseChanged:
    phase: Phase


Effect = Union[Send, Proposed, Responded, StateChanged, PhaseChanged]


class WellFormednessError(RuntimeError):
    """A client invoked while its previous operation was still pending."""


def key_of(sm: ReplicaState) -> Key:
    return (sm.cng, sm.ts)


@dataclass
class Process:
    pid: ProcessId
    sm: ReplicaState
    pend: bool = False
    op_num: int = 0
    ops: Set[Entry] = field(default_factory=set)
    my_op: Optional[Operation] = None
    phase: Phase = Phase.IDLE
    pending: Optional[Operation] = None
    awaiting: Set[ProcessId] = field(default_factory=set)
    ack_ts: int = 0
    ack_mem: FrozenSet[ProcessId] = frozenset()
    acked: Set[ProcessId] = field(default_factory=set)
    effects: List[Effect] = field(default_factory=list)

    # -- helpers ---------------------------------------------------------------

    def drain(self) -> List[Effect]:
        out, self.effects = self.effects, []
        return out

    def _broadcast(self, body: Body) -> None:
        for p in sorted(self.sm.cng.mem):
            self.effects.append(Send(p, body))

    def _set_phase(self, phase: Phase) -> None:
        if phase is not self.phase:
            self.phase = phase
            self.effects.append(PhaseChanged(phase))

    def _adopt(self, remote: ReplicaState) -> bool:
        if remote.ts > self.sm.ts:
            self.sm = remote
            self.pend = False
            self.effects.append(StateChanged(remote, "adopt"))
            return True
        return False

    @property
    def joined(self) -> bool:
        return self.pid in self.sm.cng.mem

    # -- client side -------------------------------------------------------------

    def invoke(self, op: Operation) -> None:
        if self.phase is not Phase.IDLE:
            raise WellFormednessError(f"p{self.pid} invoked {op} while {self.phase.value}")
        self.op_num += 1
        self.ops = {Entry(self.pid, op, self.op_num)}
        self.my_op = op
        self.pending = op
        self.awaiting = set(self.sm.cng.mem)
        self._broadcast(HelpRequest(self.op_num, self.sm))
        self._set_phase(Phase.GATHERING)

    def gather_done(self, fd: Detector, now: int) -> bool:
        rem = self.sm.cng.rem
        self.awaiting = {
            q for q in self.awaiting if q not in rem and not fd.suspects(self.pid, q, now)
        }
        return not self.awaiting

    def build_request(self) -> Request:
        return frozenset(
            e for e in self.ops if e.op is not None and e.num > self.sm.last_num(e.invoker)
        )

    def advance(self, fd: Detector, now: int) -> None:
        """Re-evaluate the current wait point and run forward until blocked."""
        while True:
            if self.phase is Phase.GATHERING:
                if not self.gather_done(fd, now):
                    return
                self._set_phase(Phase.AGREE)
            elif self.phase is Phase.AGREE:
                if self.sm.last_num(self.pid) == self.op_num:
                    self._performed()
                    continue
                if self.pend:
                    return
                self.pend = True
                req = self.build_request()
                self.effects.append(Proposed(key_of(self.sm), req, self.sm))
                self._broadcast(Propose(self.sm, req))
                return
            elif self.phase is Phase.AWAIT_ACKS:
                acks = len(self.acked & self.ack_mem)
                if 2 * acks > len(self.ack_mem) or self.sm.ts > self.ack_ts:
                    self._respond()
                return
            else:
                return

    def _performed(self) -> None:
        if self.pending.kind is OpKind.REC:
            self.ack_ts = self.sm.ts
            self.ack_mem = self.sm.cng.mem
            self.acked = set()
            self._broadcast(Update(self.sm, self.op_num))
            self._set_phase(Phase.AWAIT_ACKS)
        else:
            self._respond()

    def _respond(self) -> None:
        op = self.pending
        self.effects.append(Responded(op, self.op_num, self.sm.last_result(self.pid)))
        self.pending = None
        self.my_op = None
        self._set_phase(Phase.IDLE)

    # -- message handlers ------------------------------------------------------

    def on_message(self, src: ProcessId, body: Body) -> None:
        if isinstance(body, HelpRequest):
            self.on_help_request(src, body)
        elif isinstance(body, HelpReply):
            self.on_help_reply(src, body)
        elif isinstance(body, Propose):
            self.on_propose(src, body)
        elif isinstance(body, Update):
            self.on_update(src, body)
        elif isinstance(body, Ack):
            self.on_ack(src, body)
        else:  # pragma: no cover
            raise TypeError(f"unknown message body {body!r}")

    def on_help_request(self, src: ProcessId, msg: HelpRequest) -> None:
        self._adopt(msg.sm)
        self.effects.append(Send(src, HelpReply(msg.num, self.my_op, self.op_num)))

    def on_help_reply(self, src: ProcessId, msg: HelpReply) -> None:
        if self.phase is Phase.IDLE or msg.num != self.op_num:
            return
        self.ops.add(Entry(src, msg.op, msg.op_num))
        self.awaiting.discard(src)

    def on_propose(self, src: ProcessId, msg: Propose) -> None:
        if self.sm.ts > msg.sm.ts or (self.sm.ts == msg.sm.ts and self.pend):
            return
        if msg.sm.ts > self.sm.ts:
            self.effects.append(StateChanged(msg.sm, "adopt"))
        self.sm = msg.sm
        self.pend = True
        self.effects.append(Proposed(key_of(self.sm), msg.req, self.sm))
        self._broadcast(Propose(self.sm, msg.req))

    def on_update(self, src: ProcessId, msg: Update) -> None:
        self._adopt(msg.sm)
        if msg.num is not None:
            self.effects.append(Send(src, Ack(msg.num)))

    def on_ack(self, src: ProcessId, msg: Ack) -> None:
        if self.phase is Phase.AWAIT_ACKS and msg.num == self.op_num:
            self.acked.add(src)

    def on_decide(self, key: Key, req: Request) -> bool:
        """Apply a decision for the current instance; stale decisions are discarded."""
        if key != key_of(self.sm):
            return False
        self.sm = apply_decision(self.sm, req)
        self.pend = False
        self.effects.append(StateChanged(self.sm, "decide"))
        return True

    def periodic_update(self) -> None:
        self._broadcast(Update(self.sm, None))
