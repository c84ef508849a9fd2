"""Command-line entry point.

Exit codes: 0 success, 1 configuration error, 2 a run left the corridor
(or, for ``acceptance``, a criterion failed).
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import acceptance
from .io import write_csv
from .report import write_bundle
from .scenario import ScenarioError, ScenarioFile, build_scenario, load_scenario_file, resolve_scenario_path, shipped_scenarios
from .simulation import run_scenario

EXIT_OK, EXIT_CONFIG, EXIT_FAILED = 0, 1, 2

log = logging.getLogger("mapless_av")


def _load(args) -> ScenarioFile:
    cfg = load_scenario_file(resolve_scenario_path(args.scenario))
    for dotted, value in (("run.seed", args.seed), ("run.mode", args.mode)):
        if value is not None:
            cfg = cfg.with_override(dotted, str(value))
    for item in args.set or ():
        key, sep, value = item.partition("=")
        if not sep:
            raise ScenarioError(f"--set expects SECTION.KEY=VALUE, got {item!r}", cfg.path, key=item)
        cfg = cfg.with_override(key.strip(), value.strip())
    return cfg


def _summary(metrics) -> str:
    parts = [f"rms_lateral={metrics.rms_lateral:.4f}", f"max_lateral={metrics.max_lateral:.4f}"]
    if metrics.stop_errors:
        parts.append("stop_errors=" + ",".join(f"{e:+.3f}" for e in metrics.stop_errors))
    parts.append("FAILED" if metrics.failed else "ok")
    return " ".join(parts)


def cmd_run(args) -> int:
    try:
        cfg = _load(args)
        scenario = build_scenario(cfg)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    metrics, steps = run_scenario(scenario)
    out = write_bundle(args.out, metrics, steps, scenario.track, {"scenario": cfg.path})
    if not args.quiet:
        print(f"{out}: {_summary(metrics)}")
    return EXIT_FAILED if metrics.failed else EXIT_OK


def cmd_sweep(args) -> int:
    try:
        base = _load(args)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.sweep:
        if args.param or args.values or "=" not in args.sweep:
            print("error: use either --sweep SECTION.KEY=V1,V2 or --param with --values", file=sys.stderr)
            return EXIT_CONFIG
        args.param, args.values = (part.strip() for part in args.sweep.split("=", 1))
    if not args.param or args.values is None:
        print("error: sweep needs --param and --values (or --sweep)", file=sys.stderr)
        return EXIT_CONFIG
    values = [v.strip() for v in args.values.split(",") if v.strip()]
    if not values:
        print("error: --values is empty", file=sys.stderr)
        return EXIT_CONFIG
    out_root = Path(args.out)
    rows = []
    any_failed = False
    for value in values:
        try:
            scenario = build_scenario(base.with_override(args.param, value))
        except ScenarioError as exc:
            if exc.key == args.param and "unknown parameter" in str(exc):
                print(f"error: {exc}", file=sys.stderr)
                return EXIT_CONFIG
            rows.append((value, "invalid", "nan", "nan", "", str(exc).split(": ", 1)[-1]))
            if not args.quiet:
                print(f"{args.param}={value}: invalid ({exc})")
            continue
        metrics, steps = run_scenario(scenario)
        any_failed |= metrics.failed
        write_bundle(out_root / f"{args.param}={value}", metrics, steps, scenario.track, {args.param: value})
        status = "failed" if metrics.failed else "ok"
        stops = ";".join(repr(e) for e in metrics.stop_errors)
        rows.append((value, status, metrics.rms_lateral, metrics.max_lateral, stops, ""))
        if not args.quiet:
            print(f"{args.param}={value}: {_summary(metrics)}")
    out_root.mkdir(parents=True, exist_ok=True)
    write_csv(out_root / "summary.csv", ("value", "status", "rms_lateral", "max_lateral", "stop_errors", "note"), rows)
    return EXIT_FAILED if any_failed else EXIT_OK


def cmd_acceptance(args) -> int:
    only = [int(v) for v in args.only.split(",")] if args.only else None
    try:
        results = []
        for n in sorted(set(only)) if only else sorted(acceptance.CRITERIA):
            if n not in acceptance.CRITERIA:
                raise ValueError(f"no acceptance criterion {n}")
            result = acceptance.CRITERIA[n](args.tighten)
            results.append(result)
            print(result.line(), flush=True)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    passed = sum(r.passed for r in results)
    print(f"{passed}/{len(results)} criteria passed")
    return EXIT_OK if passed == len(results) else EXIT_FAILED


def cmd_list(args) -> int:
    for name in shipped_scenarios():
        print(name)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mapless-av", description="Closed-loop map-less driving simulator.")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    def scenario_args(sp):
        sp.add_argument("--scenario", required=True, help="scenario file or shipped scenario name")
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--seed", type=int, help="override [run] seed")
        sp.add_argument("--mode", choices=("fast", "full"), help="override [run] mode")
        sp.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override any scenario key")
        sp.add_argument("-q", "--quiet", action="store_true")

    run = sub.add_parser("run", help="run one scenario and write a report bundle")
    scenario_args(run)
    run.set_defaults(func=cmd_run)

    sweep = sub.add_parser("sweep", help="run a scenario once per parameter value")
    scenario_args(sweep)
    sweep.add_argument("--param", help="SECTION.KEY, e.g. controller.lookahead")
    sweep.add_argument("--values", help="comma-separated values")
    sweep.add_argument("--sweep", metavar="SECTION.KEY=V1,V2", help="shorthand for --param and --values")
    sweep.set_defaults(func=cmd_sweep)

    acc = sub.add_parser("acceptance", help="run the acceptance suite")
    acc.add_argument("--only", help="comma-separated criterion numbers")
    acc.add_argument("--tighten", type=float, default=1.0, help="scale every bound towards failure (0 < f <= 1)")
    acc.set_defaults(func=cmd_acceptance)

    ls = sub.add_parser("list", help="list shipped scenarios")
    ls.set_defaults(func=cmd_list)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
