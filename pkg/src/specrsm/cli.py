"""Command-line driver.

    specrsm run    --scenario F --seed N [--trace-out P] [--json] ...
    specrsm check  TRACE [--json]
    specrsm sweep  --scenario F --seeds SPEC [--workers W] [--json]
    specrsm replay --scenario F --seed N [--golden TRACE]

Exit codes: 0 on PASS, 1 on an invariant failure or mismatch, 2 on usage or
parse errors.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ProcessPoolExecutor

from .checker import TraceParseError, check_trace
from .harness import run_scenario, stats_from_trace
from .scenario import ScenarioParseError, load_scenario


def _run_opts(args) -> dict:
    opts = dict(backend=args.backend, clip_limit=args.clip_limit)
    if args.tick_limit is not None:
        opts["tick_limit"] = args.tick_limit
    if args.backend == "file":
        opts["data_dir"] = args.data_dir or "specrsm-data"
    return opts


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--scenario", required=True)
    p.add_argument("--backend", choices=("mem", "file"), default="mem")
    p.add_argument("--data-dir")
    p.add_argument("--clip-limit", type=int, default=1024)
    p.add_argument("--tick-limit", type=int)
    p.add_argument("--json", action="store_true")


def cmd_run(args) -> int:
    scenario = load_scenario(args.scenario)
    result = run_scenario(scenario, args.seed, **_run_opts(args))
    if args.trace_out:
        with open(args.trace_out, "w", encoding="utf-8") as fh:
            fh.write("\n".join(result.trace) + "\n")
    verdict = check_trace(result.trace)
    stats = stats_from_trace(result.trace)
    if args.json:
        print(json.dumps({
            "scenario": args.scenario, "seed": args.seed,
            "verdict": "PASS" if verdict.ok else "FAIL",
            "violations": [vars(v) for v in verdict.violations[:10]],
            "quiescent": result.quiescent, "stats": stats,
        }, sort_keys=True))
    else:
        print(f"{'PASS' if verdict.ok else 'FAIL'} seed={args.seed} "
              f"ticks={stats['ticks']} decisions={stats['decisions']} "
              f"messages={stats['messages']} merges={stats['merges']} "
              f"speculative_carryover={stats['speculative_carryover']}")
        if not verdict.ok:
            v = verdict.first()
            print(f"first violation [{v.rule}] line {v.line_no}: {v.message}")
    return 0 if verdict.ok else 1


def cmd_check(args) -> int:
    with open(args.trace, "r", encoding="utf-8") as fh:
        verdict = check_trace(fh)
    if args.json:
        print(json.dumps({
            "trace": args.trace, "verdict": "PASS" if verdict.ok else "FAIL",
            "violations": [vars(v) for v in verdict.violations[:10]],
            "lines": verdict.lines,
        }, sort_keys=True))
    elif verdict.ok:
        print(f"PASS {verdict.lines} records")
    else:
        v = verdict.first()
        print(f"FAIL [{v.rule}] line {v.line_no}: {v.message} "
              f"({len(verdict.violations)} violations)")
    return 0 if verdict.ok else 1


def _seed_range(spec: str) -> range:
    if ":" in spec:
        lo, hi = spec.split(":")
        return range(int(lo), int(hi))
    return range(int(spec))


def _sweep_one(job) -> tuple[int, bool, str]:
    path, seed, opts = job
    scenario = load_scenario(path)
    result = run_scenario(scenario, seed, **opts)
    verdict = check_trace(result.trace)
    first = verdict.first()
    return seed, verdict.ok, "" if verdict.ok else f"[{first.rule}] {first.message}"


def cmd_sweep(args) -> int:
    seeds = _seed_range(args.seeds)
    opts = _run_opts(args)
    jobs = [(args.scenario, seed, opts) for seed in seeds]
    failures: list[tuple[int, str]] = []
    if args.workers > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            outcomes = pool.map(_sweep_one, jobs, chunksize=16)
            for seed, ok, why in outcomes:
                if not ok:
                    failures.append((seed, why))
    else:
        for job in jobs:
            seed, ok, why = _sweep_one(job)
            if not ok:
                failures.append((seed, why))
    if args.json:
        print(json.dumps({
            "scenario": args.scenario, "runs": len(jobs),
            "failures": [{"seed": s, "why": w} for s, w in failures[:20]],
            "verdict": "PASS" if not failures else "FAIL",
        }, sort_keys=True))
    else:
        print(f"{'PASS' if not failures else 'FAIL'} {len(jobs)} runs, "
              f"{len(failures)} failures")
        for seed, why in failures[:10]:
            print(f"  seed {seed}: {why}")
    return 0 if not failures else 1


def cmd_replay(args) -> int:
    scenario = load_scenario(args.scenario)
    opts = _run_opts(args)
    fresh = run_scenario(scenario, args.seed, **opts).trace
    if args.golden:
        with open(args.golden, "r", encoding="utf-8") as fh:
            reference = fh.read().splitlines()
        label = args.golden
    else:
        reference = run_scenario(scenario, args.seed, **opts).trace
        label = "second run"
    if fresh == reference:
        print(f"PASS byte-identical with {label} ({len(fresh)} records)")
        return 0
    for i, (a, b) in enumerate(zip(fresh, reference)):
        if a != b:
            print(f"FAIL first difference at record {i + 1}:\n  new: {a}\n  ref: {b}")
            return 1
    print(f"FAIL length mismatch: {len(fresh)} vs {len(reference)} records")
    return 1


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="specrsm", description=__doc__)
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("run", help="run one scenario and check its trace")
    _add_run_flags(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trace-out")
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("check", help="check an existing trace file")
    p.add_argument("trace")
    p.add_argument("--json", action="store_true")
    p.set_defaults(fn=cmd_check)

    p = sub.add_parser("sweep", help="run many seeds of one scenario")
    _add_run_flags(p)
    p.add_argument("--seeds", default="100", help="count or lo:hi")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("replay", help="re-run and diff against a golden trace")
    _add_run_flags(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--golden")
    p.set_defaults(fn=cmd_replay)

    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ScenarioParseError, TraceParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
