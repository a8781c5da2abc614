"""Scenario files: load, validate, and turn (scenario, seed) into a Simulation.

A scenario is a YAML mapping::

    name: liveness-quiescent
    initial: [1, 2, 3]            # or {min: 3, max: 7} for a seeded random size
    seeds: 50
    budget: 2000
    period: 10
    delay_bound: 5
    fd:
      kind: eventually-perfect    # or suspect-forever (with victims: [...])
      stabilization_time: 300     # or {min: .., max: ..}
      completeness_lag: 5
      false_suspicions: 0         # random pre-stabilization fail overrides
      overrides:
        - {querier: null, target: 4, start: 0, end: ST+1, answer: fail}
    links:
      - {src: 4, dst: null, start: "@slow-op", end: null, release: 400}
    plan:
      kind: scripted | random-fair | epochs
      ...
    expect: {...}                 # scenario-specific assertions, see checker

Integer fields of overrides and link rules may be written ``ST`` or ``ST+k``
to refer to the seed's stabilization time.
"""

from __future__ import annotations

import random
import re
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import yaml

from .core import Change, Operation, ProcessId, change_set_views
from .drivers import EpochDriver, RandomFairDriver, ScriptedDriver, ScriptedEvent
from .fd import (
    Answer,
    FdSchedule,
    Override,
    make_detector,
    schedule_to_json,
    validate_schedule,
)
from .kernel import Driver, LinkRule, Simulation, minority_ok

CANNED = ("atomicity-fuzz", "theorem1", "liveness-endless-reconfig", "liveness-quiescent",
          "fd-contract")

_ST_EXPR = re.compile(r"^ST(?:\s*([+-])\s*(\d+))?$")


class ScenarioError(ValueError):
    """The scenario file is malformed or describes a run the model forbids."""


def _range(raw, what: str) -> Tuple[int, int]:
    if isinstance(raw, int):
        return raw, raw
    if isinstance(raw, dict) and set(raw) == {"min", "max"}:
        lo, hi = int(raw["min"]), int(raw["max"])
        if lo > hi:
            raise ScenarioError(f"{what}: min {lo} exceeds max {hi}")
        return lo, hi
    raise ScenarioError(f"{what}: expected an integer or {{min, max}}, got {raw!r}")


def _time(raw, st: int, what: str) -> Union[int, str, None]:
    """Resolve a time field: int, None, "@label", or an ST expression."""
    if raw is None or isinstance(raw, int):
        return raw
    if isinstance(raw, str):
        if raw.startswith("@"):
            return raw
        m = _ST_EXPR.match(raw.strip())
        if m:
            sign, k = m.groups()
            off = int(k) if k else 0
            return st + off if sign != "-" else st - off
    raise ScenarioError(f"{what}: bad time value {raw!r}")


def _operation(raw, what: str) -> Operation:
    try:
        return Operation.from_json(raw)
    except (KeyError, TypeError, ValueError) as exc:
        raise ScenarioError(f"{what}: bad operation {raw!r} ({exc})") from None


@dataclass
class Scenario:
    name: str
    initial: Tuple[int, int] | List[ProcessId]
    plan: Dict[str, Any]
    fd: Dict[str, Any] = field(default_factory=lambda: {"kind": "eventually-perfect"})
    links: List[Dict[str, Any]] = field(default_factory=list)
    seeds: int = 1
    budget: int = 5000
    period: int = 10
    delay_bound: int = 5
    expect: Dict[str, Any] = field(default_factory=dict)
    description: str = ""

    # -- loading ---------------------------------------------------------------

    @classmethod
    def from_dict(cls, raw: Dict[str, Any]) -> "Scenario":
        if not isinstance(raw, dict):
            raise ScenarioError("scenario must be a mapping")
        known = {"name", "initial", "plan", "fd", "links", "seeds", "budget", "period",
                 "delay_bound", "expect", "description"}
        unknown = set(raw) - known
        if unknown:
            raise ScenarioError(f"unknown scenario keys: {sorted(unknown)}")
        for key in ("name", "initial", "plan"):
            if key not in raw:
                raise ScenarioError(f"missing required key {key!r}")
        initial = raw["initial"]
        if isinstance(initial, list):
            if not initial:
                raise ScenarioError("initial membership must be non-empty")
            if len(set(initial)) != len(initial) or not all(isinstance(p, int) for p in initial):
                raise ScenarioError("initial membership must be distinct integer ids")
        else:
            lo, hi = _range(initial, "initial")
            if lo < 1:
                raise ScenarioError("initial membership must be non-empty")
            initial = (lo, hi)
        sc = cls(
            name=str(raw["name"]),
            initial=initial,
            plan=dict(raw["plan"]),
            fd=dict(raw.get("fd") or {"kind": "eventually-perfect"}),
            links=list(raw.get("links") or []),
            seeds=int(raw.get("seeds", 1)),
            budget=int(raw.get("budget", 5000)),
            period=int(raw.get("period", 10)),
            delay_bound=int(raw.get("delay_bound", 5)),
            expect=dict(raw.get("expect") or {}),
            description=str(raw.get("description", "")),
        )
        sc.validate()
        return sc

    @classmethod
    def load(cls, path: Union[str, Path]) -> "Scenario":
        text = Path(path).read_text()
        try:
            raw = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ScenarioError(f"{path}: not valid YAML ({exc})") from None
        return cls.from_dict(raw)

    @classmethod
    def canned(cls, name: str) -> "Scenario":
        if name not in CANNED:
            raise ScenarioError(f"no canned scenario named {name!r}")
        text = resources.files("dynreg.scenarios").joinpath(f"{name}.yaml").read_text()
        return cls.from_dict(yaml.safe_load(text))

    @classmethod
    def resolve(cls, ref: str) -> "Scenario":
        """A path to a scenario file, or the name of a canned scenario."""
        if ref in CANNED and not Path(ref).exists():
            return cls.canned(ref)
        path = Path(ref)
        if not path.is_file():
            raise FileNotFoundError(ref)
        return cls.load(path)

    # -- validation ------------------------------------------------------------

    def validate(self) -> None:
        if self.seeds < 1 or self.budget < 1 or self.delay_bound < 1 or self.period < 0:
            raise ScenarioError("seeds, budget and delay_bound must be positive; period >= 0")
        kind = self.plan.get("kind")
        if kind not in ("random-fair", "epochs", "scripted"):
            raise ScenarioError(f"unknown plan kind {kind!r}")
        fd_kind = self.fd.get("kind")
        if fd_kind not in ("eventually-perfect", "suspect-forever"):
            raise ScenarioError(f"unknown failure detector kind {fd_kind!r}")
        # Building every seed would be wasteful; the first and the extremes of the
        # random ranges exercise every static check.
        lo_st, hi_st = _range(self.fd.get("stabilization_time", 0), "fd.stabilization_time")
        for st in sorted({lo_st, hi_st}):
            self._schedule(st, random.Random(0), self._members(random.Random(0)))
            self._links(st)
        if kind == "scripted":
            self._validate_script()
        if kind == "epochs":
            n = int(self.plan.get("n", 4))
            if isinstance(self.initial, list) and sorted(self.initial) != list(range(1, n + 1)):
                raise ScenarioError(f"epoch plan needs initial = [1..{n}]")

    def _validate_script(self) -> None:
        events = self._events()
        labels = [e.label for e in events]
        if len(set(labels)) != len(labels):
            raise ScenarioError("scripted event labels must be unique")
        by_label = {e.label: e for e in events}
        for e in events:
            for trig in (e.after, e.after_invoke):
                if trig is not None and trig not in by_label:
                    raise ScenarioError(f"event {e.label!r} waits on unknown label {trig!r}")
        if not isinstance(self.initial, list):
            return
        # Static failure-model check along each event's `after` chain: changes of
        # reconfigs known to have responded are in V; everything else is unknown,
        # so only crashes that are provably allowed pass.
        removed_ever: set = set()
        for e in events:
            if e.op is not None and e.op.changes:
                views = change_set_views(e.op.changes)
                readd = views.join & removed_ever
                if readd:
                    raise ScenarioError(f"event {e.label!r} re-adds removed process p{min(readd)}")
                removed_ever |= views.remove
        crashed_before: set = set()
        for e in events:
            if not e.crash:
                continue
            done = self._responded_ancestors(e, by_label)
            v = {Change.add(p) for p in self.initial}
            for lab in done:
                op = by_label[lab].op
                if op is not None and op.changes:
                    v |= set(op.changes)
            V = change_set_views(v)
            crashed = set(crashed_before)
            for p in e.crash:
                if p in V.remove:
                    crashed.add(p)
                    continue
                crashed.add(p)
                if not minority_ok(crashed - set(V.remove), set(V.members), set(), set()):
                    raise ScenarioError(
                        f"event {e.label!r}: crashing p{p} fails the failure-model check")
            crashed_before = crashed

    @staticmethod
    def _responded_ancestors(ev: ScriptedEvent, by_label: Dict[str, ScriptedEvent]) -> set:
        out, stack = set(), [ev]
        while stack:
            e = stack.pop()
            for trig in (e.after,):
                if trig is not None and trig not in out:
                    out.add(trig)
                    stack.append(by_label[trig])
            if e.after_invoke is not None:
                stack.append(by_label[e.after_invoke])
        return out

    # -- per-seed construction -------------------------------------------------

    def _members(self, rng: random.Random) -> List[ProcessId]:
        if isinstance(self.initial, list):
            return sorted(self.initial)
        lo, hi = self.initial
        return list(range(1, rng.randint(lo, hi) + 1))

    def _schedule(self, st: int, rng: random.Random, members: List[ProcessId]) -> FdSchedule:
        lag = int(self.fd.get("completeness_lag", 1))
        overrides = []
        for i, raw in enumerate(self.fd.get("overrides") or []):
            what = f"fd.overrides[{i}]"
            try:
                ov = Override(
                    raw.get("querier"), int(raw["target"]),
                    _time(raw.get("start", 0), st, what), _time(raw["end"], st, what),
                    Answer(raw.get("answer", "fail")))
            except (KeyError, ValueError, TypeError) as exc:
                raise ScenarioError(f"{what}: {exc}") from None
            if not isinstance(ov.start, int) or not isinstance(ov.end, int):
                raise ScenarioError(f"{what}: override times must be integers or ST expressions")
            overrides.append(ov)
        for _ in range(int(self.fd.get("false_suspicions", 0))):
            if st < 1 or len(members) < 2:
                break
            querier, target = rng.sample(members, 2)
            start = rng.randint(0, st)
            end = rng.randint(start + 1, st + 1)
            overrides.append(Override(querier, target, start, end, Answer.FAIL))
        try:
            sched = FdSchedule(st, lag, tuple(overrides))
        except ValueError as exc:
            raise ScenarioError(f"fd: {exc}") from None
        crash_plan = {int(p): int(t) for p, t in (self.fd.get("crash_plan") or {}).items()}
        bad = validate_schedule(sched, crash_plan)
        if bad:
            v = bad[0]
            raise ScenarioError(
                f"fd schedule contradicts {v.clause} for target p{v.target} at t={v.time}")
        return sched

    def _links(self, st: int) -> Tuple[LinkRule, ...]:
        rules = []
        for i, raw in enumerate(self.links):
            what = f"links[{i}]"
            unknown = set(raw) - {"src", "dst", "start", "end", "release"}
            if unknown:
                raise ScenarioError(f"{what}: unknown keys {sorted(unknown)}")
            release = _time(raw.get("release"), st, what)
            if isinstance(release, str):
                raise ScenarioError(f"{what}: release must be an integer or ST expression")
            rules.append(LinkRule(raw.get("src"), raw.get("dst"),
                                  _time(raw.get("start", 0), st, what),
                                  _time(raw.get("end"), st, what), release))
        return tuple(rules)

    def _events(self) -> List[ScriptedEvent]:
        out = []
        for i, raw in enumerate(self.plan.get("events") or []):
            what = f"plan.events[{i}]"
            if "label" not in raw:
                raise ScenarioError(f"{what}: missing label")
            op = _operation(raw["op"], what) if raw.get("op") is not None else None
            if op is not None and raw.get("pid") is None:
                raise ScenarioError(f"{what}: an operation needs a pid")
            if op is None and not raw.get("crash"):
                raise ScenarioError(f"{what}: event does nothing")
            out.append(ScriptedEvent(
                label=str(raw["label"]), pid=raw.get("pid"), op=op,
                crash=tuple(raw.get("crash") or ()), at=raw.get("at"),
                after=raw.get("after"), after_invoke=raw.get("after_invoke"),
                delay=int(raw.get("delay", 0))))
        return out

    def _driver(self, n: Optional[int], epochs: Optional[int]) -> Driver:
        plan = dict(self.plan)
        kind = plan.pop("kind")
        if kind == "random-fair":
            return RandomFairDriver(**plan)
        if kind == "epochs":
            if n is not None:
                plan["n"] = n
            if epochs is not None:
                plan["epochs"] = epochs
            return EpochDriver(**plan)
        return ScriptedDriver(self._events())

    def with_overrides(self, *, budget: Optional[int] = None, n: Optional[int] = None,
                       epochs: Optional[int] = None, period: Optional[int] = None) -> "Scenario":
        sc = replace(self, plan=dict(self.plan))
        if budget is not None:
            sc.budget = budget
        if period is not None:
            sc.period = period
        if n is not None or epochs is not None:
            if self.plan.get("kind") != "epochs":
                raise ScenarioError("--n/--epochs only apply to epoch plans")
            if n is not None:
                sc.plan["n"] = n
                sc.initial = list(range(1, n + 1))
            if epochs is not None:
                sc.plan["epochs"] = epochs
        sc.validate()
        return sc

    def build(self, seed: int) -> Simulation:
        # A string seed hashes deterministically, unlike hash() of a tuple.
        rng = random.Random(f"{self.name}/{seed}")
        members = self._members(rng)
        lo_st, hi_st = _range(self.fd.get("stabilization_time", 0), "fd.stabilization_time")
        st = rng.randint(lo_st, hi_st)
        kind = self.fd["kind"]
        if kind == "suspect-forever":
            victims = sorted(self.fd.get("victims") or ())
            detector = make_detector(kind, victims=victims)
            fd_header = {"kind": kind, "victims": victims}
        else:
            sched = self._schedule(st, rng, members)
            detector = make_detector(kind, schedule=sched)
            fd_header = {"kind": kind, **schedule_to_json(sched)}
        try:
            driver = self._driver(None, None)
        except (TypeError, ValueError) as exc:
            raise ScenarioError(f"plan: {exc}") from None
        return Simulation(
            initial=frozenset(members),
            detector=detector,
            driver=driver,
            seed=rng.randrange(2**32),
            delay_bound=self.delay_bound,
            period=self.period,
            budget=self.budget,
            link_rules=self._links(st),
            name=self.name,
            header_extra={"run_seed": seed, "fd_schedule": fd_header, "expect": self.expect},
        )
