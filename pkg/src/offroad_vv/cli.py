"""Command-line entry point: matrix, run, report and replay."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .errors import ConfigurationError
from .harness.execution import ABORTED, TestManager, _dumps, read_log, run_case, summarise
from .harness.matrix import generate_matrix, parse_filter
from .harness.report import write_report
from .harness.suite import load_suite

DEFAULT_SUITE = "suite_herd.toml"
OUT_ENV = "OFFROAD_VV_OUT"


def _default_out() -> str:
    return os.environ.get(OUT_ENV, "vv_out")


def _load(args):
    suite = load_suite(args.suite)
    if getattr(args, "seed_override", None) is not None:
        suite = suite.with_seed(args.seed_override)
    return suite


def _select(suite, expr):
    keep = parse_filter(expr)
    return [c for c in generate_matrix(suite.matrix) if keep(c)]


def cmd_matrix(args) -> int:
    suite = _load(args)
    cases = _select(suite, args.filter)
    lines = [f"{c.case_id:04d} " + " ".join(c.labels()) + f" tod={c.tod:g} weather={c.weather} seed={c.seed}"
             for c in cases]
    print("\n".join(lines))
    if args.out and not args.dry_run:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "matrix.json").write_text(json.dumps([c.to_dict() for c in cases], indent=1) + "\n")
    return 0


def _progress(stream):
    def report(mgr, case_id, result):
        tail = ""
        if result is not None:
            tail = f" case {case_id:04d} {result.status} {'pass' if result.all_pass else 'fail'}"
        print(f"[running={mgr.running} pending={mgr.pending} completed={mgr.completed}/{mgr.total}]{tail}",
              file=stream, flush=True)

    return report


def cmd_run(args) -> int:
    suite = _load(args)
    cases = _select(suite, args.filter)
    if not cases:
        print("error: filter selects no cases", file=sys.stderr)
        return 2
    out = Path(args.out)
    mgr = TestManager(suite, out, jobs=args.jobs, transport=args.transport, progress=_progress(sys.stderr))
    try:
        results = mgr.run(cases)
    except KeyboardInterrupt:
        print("interrupted; completed cases are kept", file=sys.stderr)
        write_report(out, suite)
        return 130
    bundle = write_report(out, suite)
    aborted = [r.case_id for r in results if r.status == ABORTED]
    passed = sum(r.all_pass for r in results)
    print(f"{len(results)} cases, {passed} all-pass, {len(aborted)} aborted; report at {out / 'report.md'}")
    for w in bundle.warnings:
        print(f"warning: {w}", file=sys.stderr)
    return 1 if aborted else 0


def cmd_report(args) -> int:
    suite = _load(args)
    bundle = write_report(args.out, suite)
    for w in bundle.warnings:
        print(f"warning: {w}", file=sys.stderr)
    print(bundle.scores.to_markdown())
    return 0


def cmd_replay(args) -> int:
    """Recompute a case's KPIs from its log, optionally re-simulating to check determinism."""
    suite = _load(args)
    case, records, status, diagnostics = read_log(Path(args.log))
    result = summarise(case, records, status, diagnostics, suite)
    print(json.dumps(result.to_dict(), indent=1, sort_keys=True))
    if not args.resimulate:
        return 0
    fresh, fresh_status, _ = run_case(case, suite, args.transport)
    same = fresh_status == status and [_dumps(r) for r in fresh] == [_dumps(r) for r in records]
    print("replay identical" if same else "replay DIFFERS")
    return 0 if same else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="offroad-vv", description=__doc__)
    parser.add_argument("--log-level", default="WARNING", help="logging level (default WARNING)")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out=True):
        p.add_argument("--suite", default=DEFAULT_SUITE, help="suite TOML file (default: shipped suite)")
        p.add_argument("--seed-override", type=int, default=None, help="replace the suite base seed")
        if out:
            p.add_argument("--out", default=_default_out(), help=f"output directory (env {OUT_ENV})")

    p = sub.add_parser("matrix", help="list the test matrix without simulating")
    common(p, out=False)
    p.add_argument("--filter", default=None, help='ids "1,5,15" or predicates "C3=C3.2,P1=P1.1|P1.2"')
    p.add_argument("--out", default=None, help="also persist matrix.json here")
    p.add_argument("--dry-run", action="store_true", help="print only, never write")
    p.set_defaults(func=cmd_matrix)

    p = sub.add_parser("run", help="execute the (filtered) matrix and write the report")
    common(p)
    p.add_argument("--jobs", type=int, default=None, help="parallel cases (default: logical cores)")
    p.add_argument("--filter", default=None)
    p.add_argument("--transport", choices=("loopback", "socket"), default="loopback")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("report", help="regenerate scores and report from persisted logs")
    common(p)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("replay", help="re-score one tick log")
    common(p, out=False)
    p.add_argument("log", help="path to a case_NNNN.jsonl tick log")
    p.add_argument("--resimulate", action="store_true", help="re-run the case and compare tick logs")
    p.add_argument("--transport", choices=("loopback", "socket"), default="loopback")
    p.set_defaults(func=cmd_replay)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(), format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "jobs", None) is not None and args.jobs < 1:
        parser.error("--jobs must be at least 1")
    try:
        return args.func(args)
    except (ConfigurationError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
