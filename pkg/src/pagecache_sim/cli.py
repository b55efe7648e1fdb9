"""Command line front end.

Exit codes: 0 ok, 1 usage error, 2 invalid scenario, 3 simulation failure
(invariant violation, out of memory, stuck simulation, full disk).
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .engine import SimulationError
from .page_cache import WRITEBACK, WRITETHROUGH, InvariantError
from .scenario import ScenarioError, bundled_scenarios, load_scenario
from .storage import StorageFullError

EXIT_OK, EXIT_USAGE, EXIT_SCENARIO, EXIT_SIMULATION = 0, 1, 2, 3

log = logging.getLogger("pagecache_sim")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _on_off(value: str) -> bool:
    if value not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected 'on' or 'off'")
    return value == "on"


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pagecache-sim",
                     description="Page cache aware I/O simulator for data-intensive workloads.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run = sub.add_parser("run", help="run a scenario and export metrics")
    run.add_argument("scenario", help="scenario file or bundled scenario name")
    run.add_argument("--pagecache", type=_on_off, default=None, metavar="on|off")
    run.add_argument("--write-policy", choices=[WRITEBACK, WRITETHROUGH], default=None)
    run.add_argument("--output", type=Path, default=None, metavar="DIR")
    run.add_argument("--cadence", type=float, default=None, metavar="SECONDS",
                     help="also sample memory at a fixed interval")
    run.add_argument("--instances", type=int, default=None, metavar="N")
    run.add_argument("--check", action="store_true",
                     help="verify memory invariants after every state change")

    val = sub.add_parser("validate", help="check a scenario without running it")
    val.add_argument("scenario")

    sub.add_parser("list", help="list bundled scenarios")
    return parser


def _print_summary(summary: dict, out: Path, stream) -> None:
    print(f"scenario {summary['scenario']}: page cache {'on' if summary['page_cache'] else 'off'}, "
          f"{summary['write_policy']}, {summary['instances']} instance(s)", file=stream)
    print(f"{'inst':>4} {'task':<24} {'read (s)':>12} {'compute (s)':>12} {'write (s)':>12}",
          file=stream)
    for t in summary["tasks"]:
        print(f"{t['instance']:>4} {t['task']:<24} {t['read']:>12.3f} {t['compute']:>12.3f} "
              f"{t['write']:>12.3f}", file=stream)
    print(f"makespan {summary['makespan']:.3f} s simulated, "
          f"{summary['wall_clock_s']:.3f} s wall clock", file=stream)
    print(f"results written to {out}", file=stream)


def cmd_run(args) -> int:
    scenario = load_scenario(args.scenario)
    if args.instances is not None and args.instances < 1:
        raise ScenarioError("--instances must be >= 1")
    if args.cadence is not None and args.cadence < 0:
        raise ScenarioError("--cadence must be >= 0")
    result = scenario.run(page_cache=args.pagecache, write_policy=args.write_policy,
                          instances=args.instances, cadence=args.cadence, check=args.check)
    out = args.output or Path(scenario.output or f"results/{scenario.name}")
    result.export(out)
    _print_summary(result.summary(), out, sys.stdout)
    return EXIT_OK


def cmd_validate(args) -> int:
    scenario = load_scenario(args.scenario)
    log.debug("parsed %s", scenario)
    print("ok")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "list":
            for name in bundled_scenarios():
                print(name)
            return EXIT_OK
        if args.command == "validate":
            return cmd_validate(args)
        return cmd_run(args)
    except ScenarioError as e:
        print(f"invalid scenario: {e}", file=sys.stderr)
        return EXIT_SCENARIO
    except (InvariantError, SimulationError, StorageFullError) as e:
        print(f"simulation failed: {e}", file=sys.stderr)
        return EXIT_SIMULATION


if __name__ == "__main__":
    sys.exit(main())
