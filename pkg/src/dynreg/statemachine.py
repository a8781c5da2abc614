"""The replicated register state machine and its deterministic transition."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from typing import Dict, Iterable, List, Mapping, Tuple

from .core import (
    BOTTOM,
    OK,
    Configuration,
    Entry,
    OpKind,
    ProcessId,
    Result,
    Value,
    apply_reconfig,
)

LastOp = Tuple[int, Result]

_KIND_RANK = {OpKind.WR: 0, OpKind.RD: 1, OpKind.REC: 2}


class DecisionError(RuntimeError):
    """A decided request tried to re-execute an operation already performed."""


@dataclass(frozen=True, eq=True)
class ReplicaState:
    ts: int
    value: Value
    cng: Configuration
    last_ops: Mapping[ProcessId, LastOp] = field(default_factory=dict)

    __hash__ = None  # type: ignore[assignment]

    @classmethod
    def initial(cls, members: Iterable[ProcessId]) -> "ReplicaState":
        cng = Configuration.initial(members)
        return cls(0, BOTTOM, cng, {p: (0, BOTTOM) for p in cng.mem})

    def last_num(self, pid: ProcessId) -> int:
        entry = self.last_ops.get(pid)
        return entry[0] if entry is not None else 0

    def last_result(self, pid: ProcessId) -> Result:
        entry = self.last_ops.get(pid)
        return entry[1] if entry is not None else BOTTOM

    def to_json(self) -> dict:
        # cached: states are shared and serialized into every trace record that mentions them
        return self._json

    @cached_property
    def _json(self) -> dict:
        return {
            "ts": self.ts,
            "value": self.value,
            "cng": self.cng.to_json(),
            "lastOps": [[p, n, r] for p, (n, r) in sorted(self.last_ops.items())],
        }

    @classmethod
    def from_json(cls, raw: dict) -> "ReplicaState":
        return cls(
            int(raw["ts"]),
            raw["value"],
            Configuration.from_json(raw["cng"]),
            {int(p): (int(n), r) for p, n, r in raw["lastOps"]},
        )

    def canonical(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True, separators=(",", ":"))


def intra_request_order(req: Iterable[Entry]) -> List[Entry]:
    """Writes, then reads, then reconfigs; each group by descending invoker id."""
    entries = [e for e in req if e.op is not None]
    return sorted(entries, key=lambda e: (_KIND_RANK[e.op.kind], -e.invoker))


def apply_decision(sm: ReplicaState, req: Iterable[Entry]) -> ReplicaState:
    ordered = intra_request_order(req)
    last_ops: Dict[ProcessId, LastOp] = dict(sm.last_ops)
    for e in ordered:
        if e.num <= sm.last_num(e.invoker):
            raise DecisionError(
                f"p{e.invoker} op #{e.num} already performed (lastOps num {sm.last_num(e.invoker)})"
            )

    value = sm.value
    writes = [e for e in ordered if e.op.kind is OpKind.WR]
    if writes:
        # the smallest invoker's write is last in the ordering, so it sticks
        value = min(writes, key=lambda e: e.invoker).op.value

    cng = sm.cng
    for e in ordered:
        if e.op.kind is OpKind.RD:
            last_ops[e.invoker] = (e.num, value)
        else:
            last_ops[e.invoker] = (e.num, OK)
            if e.op.kind is OpKind.REC:
                cng = apply_reconfig(cng, e.op.changes)
    for p in cng.mem:
        last_ops.setdefault(p, (0, BOTTOM))
    return ReplicaState(sm.ts + 1, value, cng, last_ops)


def adopt_if_newer(local: ReplicaState, remote: ReplicaState) -> Tuple[ReplicaState, bool]:
    if remote.ts > local.ts:
        return remote, True
    return local, False
