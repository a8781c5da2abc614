"""Adversary plans: who invokes what, when, and who crashes."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

from .core import Change, OpKind, Operation, ProcessId
from .kernel import AdversaryError, Driver, Simulation
from .protocol import Phase


def ready(sim: Simulation, pid: ProcessId) -> bool:
    """Alive, idle, and holding a state in which it is a member."""
    if not sim.alive(pid):
        return False
    proc = sim.proc(pid)
    return proc.phase is Phase.IDLE and proc.joined


@dataclass
class RandomFairDriver(Driver):
    """Seeded random workload with crashes under the minority condition."""

    max_ops: int = 40
    max_reconfigs: int = 10
    invoke_rate: float = 0.15
    crash_rate: float = 0.01
    max_crashes: int = 3
    reconfig_share: float = 0.2
    read_share: float = 0.5

    ops: int = 0
    reconfigs: int = 0
    crashes: int = 0
    next_value: int = 1
    next_fresh: int = 0

    def start(self, sim: Simulation) -> None:
        self.next_fresh = max(sim.initial) + 1

    def header(self) -> dict:
        return {"plan": "random-fair", "max_ops": self.max_ops,
                "max_reconfigs": self.max_reconfigs}

    def exhausted(self, sim: Simulation) -> bool:
        return self.ops >= self.max_ops

    def _invokers(self, sim: Simulation) -> List[ProcessId]:
        V = sim.V
        return [p for p in sorted(V.members)
                if ready(sim, p) and sim.is_active_candidate(p)]

    def _random_reconfig(self, sim: Simulation, pid: ProcessId) -> Optional[Operation]:
        rng = sim.rng
        V, P = sim.V, sim.P
        changes = set()
        n_add = rng.choice((0, 1, 1, 2))
        for _ in range(n_add):
            changes.add(Change.add(self.next_fresh))
            self.next_fresh += 1
        removable = sorted(set(V.members) - set(P.remove) - {pid})
        if removable and rng.random() < 0.6:
            changes.add(Change.remove(rng.choice(removable)))
        if not changes:
            changes.add(Change.add(self.next_fresh))
            self.next_fresh += 1
        remaining = set(V.members) - set(P.remove) - {c.target for c in changes if c.kind.value == "remove"}
        if len(remaining) < 3 or not sim.reconfig_allowed(changes):
            return None
        return Operation.reconfig(changes)

    def on_tick(self, sim: Simulation) -> None:
        rng = sim.rng
        if self.ops < self.max_ops and rng.random() < self.invoke_rate:
            candidates = self._invokers(sim)
            if candidates:
                pid = rng.choice(candidates)
                roll = rng.random()
                op = None
                if self.reconfigs < self.max_reconfigs and roll < self.reconfig_share:
                    op = self._random_reconfig(sim, pid)
                if op is None:
                    if rng.random() < self.read_share:
                        op = Operation.read()
                    else:
                        op = Operation.write(self.next_value)
                        self.next_value += 1
                sim.invoke(pid, op)
                self.ops += 1
                if op.kind is OpKind.REC:
                    self.reconfigs += 1
        if (self.ops < self.max_ops and self.crashes < self.max_crashes
                and rng.random() < self.crash_rate):
            alive = [p for p in sorted(sim.procs) if sim.alive(p)]
            allowed = [p for p in alive if sim.check_failure_allowed(p)]
            if allowed:
                sim.crash(rng.choice(allowed))
                self.crashes += 1


@dataclass
class EpochDriver(Driver):
    """Endless-reconfiguration adversary around a slow writer.

    The slow process (``p1``) writes at tick 0. Each epoch, the process in the
    last role adds ``n - 2`` fresh processes, then removes the processes in
    roles 2..n-1, which are then crashed. Roles are renamed so the reconfiguring
    process takes role 2 and the fresh ones take roles 3..n.
    """

    n: int = 4
    epochs: int = 20
    slow: ProcessId = 1
    slow_value: int = 1
    crash_removed: bool = True

    roles: List[ProcessId] = field(default_factory=list)
    epoch: int = 0
    completed: int = 0
    next_fresh: int = 0
    #: queued (pid, op) waiting for the invoker to be ready
    todo: List[tuple] = field(default_factory=list)
    stage: str = "add"

    def __post_init__(self):
        if self.n < 3 or self.epochs < 1:
            raise ValueError("epoch plan needs n >= 3 and at least one epoch")

    def header(self) -> dict:
        return {"plan": "epochs", "n": self.n, "epochs": self.epochs, "slow": self.slow}

    def start(self, sim: Simulation) -> None:
        self.roles = sorted(sim.initial)
        if len(self.roles) != self.n or self.roles[0] != self.slow:
            raise AdversaryError(f"epoch plan needs P0 = p{self.slow}..p{self.slow + self.n - 1}")
        self.next_fresh = max(self.roles) + 1
        sim.invoke(self.slow, Operation.write(self.slow_value))
        self._begin_epoch(sim)

    def _begin_epoch(self, sim: Simulation) -> None:
        self.epoch += 1
        V, P = sim.V, sim.P
        clean = not ((set(V.members) | set(P.join)) & set(sim.crashed))
        sim.trace.add(sim.now, "epoch", "-", {"epoch": self.epoch, "roles": list(self.roles),
                                              "minimal_failure_precondition": clean})
        fresh = list(range(self.next_fresh, self.next_fresh + self.n - 2))
        self.next_fresh += self.n - 2
        self.stage = "add"
        self.fresh = fresh
        self.todo.append((self.roles[-1], Operation.reconfig(Change.add(p) for p in fresh)))
        self._drain(sim)

    def _drain(self, sim: Simulation) -> None:
        while self.todo and ready(sim, self.todo[0][0]):
            pid, op = self.todo.pop(0)
            sim.invoke(pid, op)

    def on_tick(self, sim: Simulation) -> None:
        self._drain(sim)

    def on_respond(self, sim: Simulation, pid: ProcessId, op: Operation, num: int) -> None:
        if op.kind is not OpKind.REC or pid != self.roles[-1]:
            return
        actor = self.roles[-1]
        if self.stage == "add":
            self.stage = "remove"
            old = self.roles[1:-1]
            self.todo.append((actor, Operation.reconfig(Change.remove(p) for p in old)))
        else:
            old = self.roles[1:-1]
            if self.crash_removed:
                for p in old:
                    sim.crash(p)
            self.roles = [self.slow, actor] + self.fresh
            self.completed += 1
            if self.epoch < self.epochs:
                self._begin_epoch(sim)

    def exhausted(self, sim: Simulation) -> bool:
        return self.completed >= self.epochs


@dataclass
class ScriptedEvent:
    label: str
    pid: Optional[ProcessId] = None
    op: Optional[Operation] = None
    crash: Sequence[ProcessId] = ()
    at: Optional[int] = None
    after: Optional[str] = None  # label whose operation must have responded
    after_invoke: Optional[str] = None  # label whose operation must have been invoked
    delay: int = 0


@dataclass
class ScriptedDriver(Driver):
    """Fixed event list; each event fires at a tick or once a trigger has happened."""

    events: Sequence[ScriptedEvent] = ()

    fired: Dict[str, int] = field(default_factory=dict)
    done: Dict[str, int] = field(default_factory=dict)
    op_labels: Dict[tuple, str] = field(default_factory=dict)

    def header(self) -> dict:
        return {"plan": "scripted", "events": len(self.events)}

    def _due(self, sim: Simulation, ev: ScriptedEvent) -> bool:
        if ev.at is not None and sim.now < ev.at:
            return False
        for trig, table in ((ev.after, self.done), (ev.after_invoke, self.fired)):
            if trig is None:
                continue
            if trig not in table or sim.now < table[trig] + ev.delay:
                return False
        if ev.op is not None and not ready(sim, ev.pid):
            return False
        return True

    def on_tick(self, sim: Simulation) -> None:
        for ev in self.events:
            if ev.label in self.fired or not self._due(sim, ev):
                continue
            self.fired[ev.label] = sim.now
            sim.mark(ev.label)
            if ev.op is not None:
                num = sim.invoke(ev.pid, ev.op)
                self.op_labels[(ev.pid, num)] = ev.label
            for p in ev.crash:
                sim.crash(p)
            if ev.op is None:
                self.done[ev.label] = sim.now

    def on_respond(self, sim: Simulation, pid: ProcessId, op: Operation, num: int) -> None:
        label = self.op_labels.get((pid, num))
        if label is not None:
            self.done[label] = sim.now

    def exhausted(self, sim: Simulation) -> bool:
        return len(self.fired) == len(self.events)
