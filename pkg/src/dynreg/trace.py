"""RunTrace: an append-only event log with a canonical one-record-per-line text form.

Line format (tab separated)::

    <tick>\t<kind>\t<actor>\t<payload as compact sorted JSON>

``actor`` is a process id, ``C`` for the consensus service, or ``-`` for
kernel bookkeeping. Record kinds:

=========== ======= ================================================================
kind        actor   payload
=========== ======= ================================================================
header      -       scenario name, seed, P0, detector, expectations
invoke      p       op, num
respond     p       op, num, result
send        p       id, to, msg (message kind), ts (carried sm.ts, when any)
deliver     p       id, from, msg
drop        p       id, from, msg, why
propose     p       key, req
ignored     p       key, why (proposal not counted by consensus)
decide      C       key, req, post (resulting sm), proposers (at gate)
notify      p       key (decision delivered to p)
sm          p       via (decide | adopt), sm
phase       p       phase
crash       p       clause (failure-model clause that allowed it)
epoch       -       epoch number, minimal-failure precondition (epoch plans only)
end         -       reason (quiescent | budget), tick
=========== ======= ================================================================
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Iterable, Iterator, List, NamedTuple, Union

Actor = Union[int, str]


class TraceParseError(ValueError):
    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


class Record(NamedTuple):
    tick: int
    kind: str
    actor: Actor
    payload: Any

    def to_line(self) -> str:
        body = json.dumps(self.payload, sort_keys=True, separators=(",", ":"))
        return f"{self.tick}\t{self.kind}\t{self.actor}\t{body}"

    @classmethod
    def from_line(cls, line: str, lineno: int = 0) -> "Record":
        parts = line.rstrip("\n").split("\t")
        if len(parts) != 4:
            raise TraceParseError(lineno, f"expected 4 tab-separated fields, got {len(parts)}")
        tick, kind, actor, body = parts
        try:
            tick_i = int(tick)
        except ValueError:
            raise TraceParseError(lineno, f"bad tick {tick!r}") from None
        actor_v: Actor = int(actor) if actor.lstrip("-").isdigit() else actor
        try:
            payload = json.loads(body)
        except json.JSONDecodeError as exc:
            raise TraceParseError(lineno, f"bad payload: {exc.msg}") from None
        return cls(tick_i, kind, actor_v, payload)


@dataclass
class RunTrace:
    records: List[Record] = field(default_factory=list)

    def add(self, tick: int, kind: str, actor: Actor, payload: Any = None) -> None:
        self.records.append(Record(tick, kind, actor, {} if payload is None else payload))

    def __iter__(self) -> Iterator[Record]:
        return iter(self.records)

    def __len__(self) -> int:
        return len(self.records)

    def of_kind(self, *kinds: str) -> Iterator[Record]:
        return (r for r in self.records if r.kind in kinds)

    @property
    def header(self) -> dict:
        for r in self.records:
            if r.kind == "header":
                return r.payload
        return {}

    def dumps(self) -> str:
        return "".join(r.to_line() + "\n" for r in self.records)

    @classmethod
    def loads(cls, text: str) -> "RunTrace":
        return cls.from_lines(text.splitlines())

    @classmethod
    def from_lines(cls, lines: Iterable[str]) -> "RunTrace":
        records = []
        for i, line in enumerate(lines, 1):
            if not line.strip():
                continue
            records.append(Record.from_line(line, i))
        return cls(records)

    def normalized(self) -> "RunTrace":
        """Round-trip through text so payloads hold plain JSON types only."""
        return RunTrace.loads(self.dumps())
