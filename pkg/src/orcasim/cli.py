"""Command line front end: single runs, seed/noise batches, live service.

Exit codes: 0 success, 2 unreadable or malformed scenario, 3 run aborted
on non-finite state (the abort record is still written), 4 service port
already in use. Flag > scenario file > default, for the fields that have
flags (--tick-dt, --tau, --seed).
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from .batch import run_batch
from .engine import ScenarioError, run_scenario, scenario_from_dict

EXIT_OK = 0
EXIT_BAD_SCENARIO = 2
EXIT_ABORTED = 3
EXIT_PORT_IN_USE = 4


def _load_scenario(path: str, args: argparse.Namespace):
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as e:
        print(f"cannot read scenario: {e}", file=sys.stderr)
        return None
    except json.JSONDecodeError as e:
        print(f"scenario is not valid JSON: {e}", file=sys.stderr)
        return None
    try:
        scenario = scenario_from_dict(data)
    except ScenarioError as e:
        print(f"bad scenario at {e}", file=sys.stderr)
        return None
    overrides = {}
    if getattr(args, "tick_dt", None) is not None:
        overrides["tick_dt"] = args.tick_dt
    if getattr(args, "tau", None) is not None:
        overrides["tau"] = args.tau
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if overrides:
        scenario = replace(scenario, **overrides)
        try:
            scenario.validate()
        except ScenarioError as e:
            print(f"bad override at {e}", file=sys.stderr)
            return None
    return scenario


def _parse_seeds(text: str) -> list[int]:
    """'A..B' inclusive, or a single integer."""
    if ".." in text:
        lo, hi = text.split("..", 1)
        a, b = int(lo), int(hi)
        if b < a:
            raise ValueError(f"empty seed range {text!r}")
        return list(range(a, b + 1))
    return [int(text)]


def cmd_run(args: argparse.Namespace) -> int:
    scenario = _load_scenario(args.scenario, args)
    if scenario is None:
        return EXIT_BAD_SCENARIO
    log = run_scenario(scenario)
    out = args.out or (Path(args.scenario).stem + "_run.jsonl")
    log.write(str(out))
    if log.aborted:
        print(f"aborted at tick {log.end.get('tick')}: {log.end.get('reason')}",
              file=sys.stderr)
        return EXIT_ABORTED
    print(f"wrote {out} ({len(log.records)} ticks)")
    return EXIT_OK


def cmd_batch(args: argparse.Namespace) -> int:
    scenario = _load_scenario(args.scenario, args)
    if scenario is None:
        return EXIT_BAD_SCENARIO
    try:
        seeds = _parse_seeds(args.seeds) if args.seeds else [scenario.seed]
    except ValueError as e:
        print(str(e), file=sys.stderr)
        return EXIT_BAD_SCENARIO
    sweep = None
    if args.noise_sweep:
        try:
            sweep = [float(v) for v in args.noise_sweep.split(",") if v.strip()]
        except ValueError:
            print(f"bad --noise-sweep {args.noise_sweep!r}", file=sys.stderr)
            return EXIT_BAD_SCENARIO
    out_dir = args.out or "batch_out"
    results = run_batch(scenario, seeds, noise_sweep=sweep,
                        out_dir=out_dir, workers=args.workers)
    failed = [r for r in results if r.error is not None]
    aborted = [r for r in results if r.aborted]
    print(f"{len(results)} runs -> {out_dir}"
          f" ({len(failed)} failed, {len(aborted)} aborted)")
    for r in failed:
        print(f"  seed {r.task.seed}"
              f" level {r.task.noise_level}: {r.error.splitlines()[-1]}",
              file=sys.stderr)
    return EXIT_OK if not failed and not aborted else EXIT_ABORTED


def cmd_serve(args: argparse.Namespace) -> int:
    scenario = _load_scenario(args.scenario, args)
    if scenario is None:
        return EXIT_BAD_SCENARIO
    from .bridge import serve
    try:
        serve(scenario, host=args.host, port=args.port)
    except OSError as e:
        if e.errno in (48, 98):  # EADDRINUSE (mac, linux)
            print(f"port {args.port} already in use", file=sys.stderr)
            return EXIT_PORT_IN_USE
        raise
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="orcasim",
        description="Decentralized camera-only collision avoidance simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--scenario", required=True, help="scenario JSON file")
        p.add_argument("--tick-dt", type=float, default=None,
                       help="override simulation step seconds")
        p.add_argument("--tau", type=float, default=None,
                       help="override avoidance horizon seconds")

    run_p = sub.add_parser("run", help="simulate one scenario, write its log")
    common(run_p)
    run_p.add_argument("--seed", type=int, default=None, help="override seed")
    run_p.add_argument("--out", default=None, help="output log path")
    run_p.set_defaults(func=cmd_run)

    batch_p = sub.add_parser("batch", help="many runs across seeds and noise")
    common(batch_p)
    batch_p.add_argument("--seeds", default=None,
                         help="A..B inclusive, or one integer")
    batch_p.add_argument("--noise-sweep", default=None,
                         help="comma-separated self-velocity sigmas")
    batch_p.add_argument("--out", default=None, help="output directory")
    batch_p.add_argument("--workers", type=int, default=1)
    batch_p.set_defaults(func=cmd_batch)

    serve_p = sub.add_parser("serve", help="live sim with the WebSocket bridge")
    common(serve_p)
    serve_p.add_argument("--seed", type=int, default=None, help="override seed")
    serve_p.add_argument("--host", default="127.0.0.1")
    serve_p.add_argument("--port", type=int, default=8701)
    serve_p.set_defaults(func=cmd_serve)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
