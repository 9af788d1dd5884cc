"""Command line interface.

    deltaserve-bench list
    deltaserve-bench run --family deep-35turn --endpoint http://127.0.0.1:8000 \
        --mode stateful --iterations 3 --out reports/
    deltaserve-bench suite --endpoint http://127.0.0.1:8000 --out reports/
    deltaserve-bench compare --stateful a.json --baseline b.json --out cmp
"""

from __future__ import annotations

import argparse
from pathlib import Path

from .compare import compare
from .runner import MODES, RunReport, run_scenario
from .scenarios import FAMILIES


def _print_summary(report: RunReport) -> None:
    print(
        f"{report.scenario} [{report.mode}] requests={len(report.samples)} "
        f"median_wall={report.median_wall_ms():.2f}ms "
        f"median_sim={report.median_simulated_ms():.1f}ms "
        f"p99_wall={report.p99_wall_ms():.2f}ms hits={report.cache_hits()} "
        f"wall_total={report.wall_time_s:.2f}s"
    )


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="deltaserve-bench", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("list", help="list scenario families")

    run_p = sub.add_parser("run", help="run one scenario family")
    run_p.add_argument("--family", required=True, choices=sorted(FAMILIES))
    run_p.add_argument("--endpoint", required=True)
    run_p.add_argument("--mode", default="stateful", choices=MODES)
    run_p.add_argument("--iterations", type=int, default=5)
    run_p.add_argument("--warmup", type=int, default=1)
    run_p.add_argument("--salt", default="bench")
    run_p.add_argument("--out", default=None, help="directory for CSV/JSON reports")

    suite_p = sub.add_parser("suite", help="run every family in both modes and compare")
    suite_p.add_argument("--endpoint", required=True)
    suite_p.add_argument("--iterations", type=int, default=5)
    suite_p.add_argument("--warmup", type=int, default=1)
    suite_p.add_argument("--salt", default="bench")
    suite_p.add_argument("--out", required=True)

    cmp_p = sub.add_parser("compare", help="compare two saved reports")
    cmp_p.add_argument("--stateful", required=True)
    cmp_p.add_argument("--baseline", required=True)
    cmp_p.add_argument("--out", default=None, help="output path stem (.csv/.json)")

    args = parser.parse_args(argv)

    if args.command == "list":
        for name in sorted(FAMILIES):
            print(name)
        return 0

    if args.command == "run":
        scenario = FAMILIES[args.family](args.salt, args.iterations, args.warmup)
        report = run_scenario(scenario, args.endpoint, args.mode, args.out)
        _print_summary(report)
        return 0

    if args.command == "compare":
        result = compare(RunReport.from_json(args.stateful), RunReport.from_json(args.baseline))
        print(
            f"{result.scenario}: median speedup simulated={result.median_speedup_simulated:.2f}x "
            f"wall={result.median_speedup_wall:.2f}x "
            f"wall-time ratio={result.wall_time_ratio:.2f}x"
        )
        if args.out:
            result.to_csv(Path(args.out).with_suffix(".csv"))
            result.to_json(Path(args.out).with_suffix(".json"))
        return 0

    # suite: every family, stateful + baseline, with comparisons. The server
    # is reset before each run, so both modes can use the same salt and the
    # reports align sample-for-sample.
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, factory in sorted(FAMILIES.items()):
        reports = {}
        for mode in MODES:
            scenario = factory(args.salt, args.iterations, args.warmup)
            reports[mode] = run_scenario(scenario, args.endpoint, mode, out)
            _print_summary(reports[mode])
        result = compare(reports["stateful"], reports["baseline"])
        result.to_csv(out / f"{name}-compare.csv")
        result.to_json(out / f"{name}-compare.json")
        print(
            f"  -> {name}: median simulated speedup "
            f"{result.median_speedup_simulated:.2f}x"
        )
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
