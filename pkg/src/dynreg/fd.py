"""Scripted failure-detector oracles.

``DynamicEventuallyPerfect`` is queried one target at a time and answers ``ok``
or ``fail``.  Two clauses are forced on every answer:

* completeness: a process crashed at ``t_f`` is reported ``fail`` by every
  query at time ``>= t_f + completeness_lag``;
* accuracy: after ``stabilization_time`` every query about a process that has
  not crashed is answered ``ok``.

Anything else (the pre-stabilization window) is left to ``overrides``, and
defaults to the truthful-but-lagging answer.

``SuspectForever`` never stops suspecting its victims. It deliberately breaks
the accuracy clause and exists only to drive the impossibility run.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, List, Mapping, NamedTuple, Optional, Tuple

from .core import ProcessId


class Answer(str, enum.Enum):
    OK = "ok"
    FAIL = "fail"


class Override(NamedTuple):
    """Force ``answer`` for queries by ``querier`` (``None`` = anyone) about
    ``target`` at times in ``[start, end)``."""

    querier: Optional[ProcessId]
    target: ProcessId
    start: int
    end: int
    answer: Answer

    def covers(self, querier: ProcessId, target: ProcessId, now: int) -> bool:
        return (
            self.target == target
            and (self.querier is None or self.querier == querier)
            and self.start <= now < self.end
        )


@dataclass(frozen=True)
class FdSchedule:
    stabilization_time: int
    completeness_lag: int = 1
    overrides: Tuple[Override, ...] = ()

    def __post_init__(self):
        if self.stabilization_time < 0 or self.completeness_lag < 0:
            raise ValueError("stabilization_time and completeness_lag must be non-negative")


class Violation(NamedTuple):
    querier: Optional[ProcessId]
    target: ProcessId
    time: int
    clause: str


class Detector:
    kind = "abstract"

    def query(self, querier: ProcessId, target: ProcessId, now: int) -> Answer:
        raise NotImplementedError

    def suspects(self, querier: ProcessId, target: ProcessId, now: int) -> bool:
        return self.query(querier, target, now) is Answer.FAIL


@dataclass
class DynamicEventuallyPerfect(Detector):
    schedule: FdSchedule
    #: crash times, filled in by the kernel as crashes happen
    crashes: Mapping[ProcessId, int] = field(default_factory=dict)

    kind = "eventually-perfect"

    def query(self, querier: ProcessId, target: ProcessId, now: int) -> Answer:
        sched = self.schedule
        t_f = self.crashes.get(target)
        if t_f is not None and t_f <= now and now >= t_f + sched.completeness_lag:
            return Answer.FAIL
        crashed_now = t_f is not None and t_f <= now
        if now > sched.stabilization_time and not crashed_now:
            return Answer.OK
        for ov in sched.overrides:
            if ov.covers(querier, target, now):
                return ov.answer
        return Answer.OK


@dataclass
class SuspectForever(Detector):
    victims: frozenset
    crashes: Mapping[ProcessId, int] = field(default_factory=dict)

    kind = "suspect-forever"

    def query(self, querier: ProcessId, target: ProcessId, now: int) -> Answer:
        if target in self.victims:
            return Answer.FAIL
        t_f = self.crashes.get(target)
        if t_f is not None and t_f <= now:
            return Answer.FAIL
        return Answer.OK


def validate_schedule(sched: FdSchedule, crash_plan: Mapping[ProcessId, int]) -> List[Violation]:
    """Return every override that contradicts a forced clause (empty list = valid).

    Targets missing from ``crash_plan`` are treated as possibly correct, so a
    ``fail`` override reaching past the stabilization time is reported.
    """
    out: List[Violation] = []
    for ov in sched.overrides:
        t_f = crash_plan.get(ov.target)
        if ov.answer is Answer.OK and t_f is not None:
            first = max(ov.start, t_f + sched.completeness_lag)
            if first < ov.end:
                out.append(Violation(ov.querier, ov.target, first, "completeness"))
        if ov.answer is Answer.FAIL and t_f is None:
            first = max(ov.start, sched.stabilization_time + 1)
            if first < ov.end:
                out.append(Violation(ov.querier, ov.target, first, "accuracy"))
    return out


def schedule_to_json(sched: FdSchedule) -> dict:
    return {
        "stabilization_time": sched.stabilization_time,
        "completeness_lag": sched.completeness_lag,
        "overrides": [[o.querier, o.target, o.start, o.end, o.answer.value]
                      for o in sched.overrides],
    }


def schedule_from_json(raw: dict) -> FdSchedule:
    return FdSchedule(
        int(raw["stabilization_time"]),
        int(raw["completeness_lag"]),
        tuple(Override(q, t, s, e, Answer(a)) for q, t, s, e, a in raw["overrides"]),
    )


def make_detector(kind: str, *, schedule: Optional[FdSchedule] = None,
                  victims: Iterable[ProcessId] = ()) -> Detector:
    if kind == DynamicEventuallyPerfect.kind:
        if schedule is None:
            raise ValueError("eventually-perfect detector needs a schedule")
        return DynamicEventuallyPerfect(schedule)
    if kind == SuspectForever.kind:
        return SuspectForever(frozenset(victims))
    raise ValueError(f"unknown failure detector kind {kind!r}")
