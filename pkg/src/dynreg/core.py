"""Domain vocabulary: process ids, membership changes, configurations, operations."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import FrozenSet, Iterable, NamedTuple, Optional, Tuple, Union

ProcessId = int

#: The register's initial value. Lives outside the value domain (non-negative ints).
BOTTOM = None
OK = "ok"

Value = Optional[int]
Result = Union[int, str, None]


class ChangeKind(str, enum.Enum):
    ADD = "add"
    REMOVE = "remove"


class Change(NamedTuple):
    kind: ChangeKind
    target: ProcessId

    @classmethod
    def add(cls, target: ProcessId) -> "Change":
        return cls(ChangeKind.ADD, target)

    @classmethod
    def remove(cls, target: ProcessId) -> "Change":
        return cls(ChangeKind.REMOVE, target)

    def to_json(self) -> list:
        return [self.kind.value, self.target]

    @classmethod
    def from_json(cls, raw) -> "Change":
        kind, target = raw
        return cls(ChangeKind(kind), int(target))


ChangeSet = FrozenSet[Change]


def change_set(changes: Iterable) -> ChangeSet:
    """Build a ChangeSet from Change values or ``(kind, target)`` pairs."""
    out = set()
    for c in changes:
        if isinstance(c, Change):
            out.add(c)
        else:
            out.add(Change(ChangeKind(c[0]), int(c[1])))
    return frozenset(out)


class ChangeViews(NamedTuple):
    join: FrozenSet[ProcessId]
    remove: FrozenSet[ProcessId]
    members: FrozenSet[ProcessId]


def change_set_views(w: Iterable[Change]) -> ChangeViews:
    join = frozenset(c.target for c in w if c.kind is ChangeKind.ADD)
    remove = frozenset(c.target for c in w if c.kind is ChangeKind.REMOVE)
    return ChangeViews(join, remove, join - remove)


@dataclass(frozen=True)
class Configuration:
    mem: FrozenSet[ProcessId]
    rem: FrozenSet[ProcessId] = frozenset()

    def __post_init__(self):
        if self.mem & self.rem:
            raise ValueError(f"member and removed sets overlap: {sorted(self.mem & self.rem)}")

    @classmethod
    def initial(cls, members: Iterable[ProcessId]) -> "Configuration":
        return cls(frozenset(members), frozenset())

    def majority(self) -> int:
        return len(self.mem) // 2 + 1

    def to_json(self) -> dict:
        return {"mem": sorted(self.mem), "rem": sorted(self.rem)}

    @classmethod
    def from_json(cls, raw: dict) -> "Configuration":
        return cls(frozenset(raw["mem"]), frozenset(raw["rem"]))


def apply_reconfig(cng: Configuration, changes: Iterable[Change]) -> Configuration:
    """Apply one reconfig's changes; removal beats addition, removed ids never return."""
    views = change_set_views(changes)
    mem = {p for p in cng.mem if p not in views.remove}
    mem |= {p for p in views.join if p not in cng.rem}
    rem = cng.rem | views.remove
    return Configuration(frozenset(mem - rem), frozenset(rem))


class OpKind(str, enum.Enum):
    RD = "RD"
    WR = "WR"
    REC = "REC"


@dataclass(frozen=True)
class Operation:
    kind: OpKind
    value: Value = None
    changes: ChangeSet = field(default_factory=frozenset)

    def __post_init__(self):
        if self.kind is OpKind.WR and (not isinstance(self.value, int) or self.value < 0):
            raise ValueError(f"write needs a non-negative integer value, got {self.value!r}")

    @classmethod
    def read(cls) -> "Operation":
        return cls(OpKind.RD)

    @classmethod
    def write(cls, value: int) -> "Operation":
        return cls(OpKind.WR, value)

    @classmethod
    def reconfig(cls, changes: Iterable) -> "Operation":
        return cls(OpKind.REC, changes=change_set(changes))

    def to_json(self) -> dict:
        if self.kind is OpKind.WR:
            return {"kind": "WR", "value": self.value}
        if self.kind is OpKind.REC:
            return {"kind": "REC", "changes": sorted(c.to_json() for c in self.changes)}
        return {"kind": "RD"}

    @classmethod
    def from_json(cls, raw: Optional[dict]) -> Optional["Operation"]:
        if raw is None:
            return None
        kind = OpKind(raw["kind"])
        if kind is OpKind.WR:
            return cls.write(int(raw["value"]))
        if kind is OpKind.REC:
            return cls.reconfig(Change.from_json(c) for c in raw["changes"])
        return cls.read()

    def __str__(self) -> str:
        if self.kind is OpKind.WR:
            return f"WR({self.value})"
        if self.kind is OpKind.REC:
            inner = ",".join(f"{c.kind.value} p{c.target}" for c in sorted(self.changes))
            return f"REC({inner})"
        return "RD"


class Entry(NamedTuple):
    """One operation inside a proposed or decided request."""

    invoker: ProcessId
    op: Optional[Operation]
    num: int

    def to_json(self) -> list:
        return [self.invoker, self.op.to_json() if self.op is not None else None, self.num]

    @classmethod
    def from_json(cls, raw) -> "Entry":
        invoker, op, num = raw
        return cls(int(invoker), Operation.from_json(op), int(num))


Request = FrozenSet[Entry]


def request_to_json(req: Iterable[Entry]) -> list:
    return [e.to_json() for e in sorted(req, key=lambda e: (e.invoker, e.num))]


def request_from_json(raw) -> Request:
    return frozenset(Entry.from_json(e) for e in raw)


OpId = Tuple[ProcessId, int]
