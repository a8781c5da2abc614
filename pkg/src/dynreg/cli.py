"""Command-line front door: ``dynreg run``, ``dynreg replay``, ``dynreg list``.

Exit codes: 0 every check passed, 1 some check failed, 2 usage or validation error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import List, Optional, Sequence

from .checker import CHECKS, Verdict, verify
from .kernel import AdversaryError
from .scenario import CANNED, Scenario, ScenarioError
from .trace import RunTrace, TraceParseError

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


def selected_checks(flags: Optional[List[str]], scenario_checks: Sequence[str]) -> List[str]:
    if not flags:
        return list(scenario_checks)
    if "all" in flags:
        base = ["atomicity", "waitfree", "invariants"]
        return base + [c for c in scenario_checks if c not in base]
    return list(dict.fromkeys(flags))


def run_seed(scenario: Scenario, seed: int, checks: Sequence[str]) -> tuple[str, Verdict]:
    text = scenario.build(seed).run().dumps()
    # verify the serialized form, so replaying the file gives this exact verdict
    return text, verify(RunTrace.loads(text), checks)


def _summary_line(v: Verdict) -> str:
    status = "PASS" if v.ok else "FAIL"
    failed = ",".join(v.failures()) or "-"
    return f"{v.scenario:<28} {str(v.seed):>6} {v.end:<10} {status:<5} {failed}"


def cmd_run(args: argparse.Namespace) -> int:
    try:
        scenario = Scenario.resolve(args.scenario)
        scenario = scenario.with_overrides(budget=args.budget, n=args.n, epochs=args.epochs)
    except FileNotFoundError:
        print(f"error: no scenario file or canned scenario named {args.scenario!r}", file=sys.stderr)
        return EXIT_USAGE
    except ScenarioError as exc:
        print(f"error: invalid scenario: {exc}", file=sys.stderr)
        return EXIT_USAGE
    checks = selected_checks(args.check, scenario.expect.get("checks", CHECKS[:3]))
    seeds = range(args.seed_start, args.seed_start + (args.seeds or scenario.seeds))
    out = Path(args.out) if args.out else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    print(f"{'scenario':<28} {'seed':>6} {'end':<10} {'ok':<5} failed")
    failures = 0
    for seed in seeds:
        try:
            text, verdict = run_seed(scenario, seed, checks)
        except (AdversaryError, ScenarioError) as exc:
            print(f"error: seed {seed}: {exc}", file=sys.stderr)
            return EXIT_USAGE
        if out is not None:
            stem = f"{scenario.name}-seed{seed}"
            (out / f"{stem}.trace").write_text(text)
            (out / f"{stem}.verdict.json").write_text(
                json.dumps(verdict.to_json(), indent=2, sort_keys=True) + "\n")
        print(_summary_line(verdict))
        failures += not verdict.ok
    total = len(seeds)
    print(f"{total - failures}/{total} seeds passed")
    return EXIT_OK if failures == 0 else EXIT_FAIL


def cmd_replay(args: argparse.Namespace) -> int:
    path = Path(args.trace)
    try:
        trace = RunTrace.loads(path.read_text())
    except OSError as exc:
        print(f"error: cannot read {path}: {exc.strerror}", file=sys.stderr)
        return EXIT_USAGE
    except TraceParseError as exc:
        print(f"error: {path}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if not trace.header:
        print(f"error: {path}: trace has no header record", file=sys.stderr)
        return EXIT_USAGE
    scenario_checks = (trace.header.get("expect") or {}).get("checks", CHECKS[:3])
    try:
        verdict = verify(trace, selected_checks(args.check, scenario_checks))
    except (KeyError, TypeError, ValueError) as exc:
        print(f"error: {path}: malformed trace ({exc})", file=sys.stderr)
        return EXIT_USAGE
    print(json.dumps(verdict.to_json(), indent=2, sort_keys=True))
    return EXIT_OK if verdict.ok else EXIT_FAIL


def cmd_list(args: argparse.Namespace) -> int:
    for name in CANNED:
        sc = Scenario.canned(name)
        print(f"{name:<28} {' '.join(sc.description.split())}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dynreg", description="Simulate and verify a reconfigurable atomic register.")
    sub = parser.add_subparsers(dest="command", required=True)

    check_choices = ["atomicity", "waitfree", "invariants", "fd", "all"]
    run = sub.add_parser("run", help="simulate a scenario over a range of seeds")
    run.add_argument("scenario", help="scenario YAML file or canned scenario name")
    run.add_argument("--seeds", type=int, help="number of seeds (default: the scenario's)")
    run.add_argument("--seed-start", type=int, default=0, help="first seed (default 0)")
    run.add_argument("--budget", type=int, help="override the tick budget")
    run.add_argument("--out", help="directory for per-seed traces and verdicts")
    run.add_argument("--check", action="append", choices=check_choices,
                     help="check to run (repeatable; default: the scenario's list)")
    run.add_argument("--n", type=int, help="epoch plans: number of initial processes")
    run.add_argument("--epochs", type=int, help="epoch plans: number of epochs")
    run.set_defaults(func=cmd_run)

    replay = sub.add_parser("replay", help="re-check a stored trace")
    replay.add_argument("trace", help="trace file written by run --out")
    replay.add_argument("--check", action="append", choices=check_choices)
    replay.set_defaults(func=cmd_replay)

    lst = sub.add_parser("list", help="list canned scenarios")
    lst.set_defaults(func=cmd_list)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    if getattr(args, "seeds", None) is not None and args.seeds < 1:
        print("error: --seeds must be positive", file=sys.stderr)
        return EXIT_USAGE
    return args.func(args)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
