"""Command-line front end: run scenarios, compare bundles, summarize captures.

Exit codes: 0 success, 2 configuration problem (scenario rejected, bundles
misaligned, capture malformed, port busy), 3 runtime fault (plant left its
envelope, I/O failure).
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace

from . import capture
from .diffreport import DiffError, compute, write_report
from .plant import PlantFault
from .runner import run
from .scenario import ConfigError, ScenarioConfig, parse_scenario

EXIT_CONFIG = 2
EXIT_RUNTIME = 3

_UNSET = object()  # --speed absent: keep whatever the scenario says


def _speed(text: str):
    if text == "max":
        return None
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad speed: {text!r}") from None
    if value <= 0:
        raise argparse.ArgumentTypeError("speed must be positive or 'max'")
    return value


def _load_scenario(args) -> ScenarioConfig:
    cfg = parse_scenario(args.scenario)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.speed is not _UNSET:
        cfg = replace(cfg, speed=args.speed)
    return cfg


def cmd_run(args) -> int:
    cfg = _load_scenario(args)
    summary = run(cfg, args.out)
    traffic = summary["traffic"]
    print(f"{cfg.name}: wrote {args.out} ({traffic['packets']} packets, "
          f"{len(summary['points'])} points, {len(summary['alarms'])} alarms)")
    return 0


def cmd_diff(args) -> int:
    if args.out:
        report = write_report(args.baseline, args.attack, args.out)
    else:
        report = compute(args.baseline, args.attack)
    print(json.dumps(report, indent=2, sort_keys=True))
    return 0


def cmd_pcap_summary(args) -> int:
    print(json.dumps(capture.summarize_pcap(args.pcap), indent=2, sort_keys=True))
    return 0


def cmd_serve(args) -> int:
    from .httpapi import serve  # deferred: pulls in the web stack

    cfg = _load_scenario(args)
    if args.speed is _UNSET and cfg.speed is None:
        cfg = replace(cfg, speed=1.0)  # interactive default is real time
    summary = serve(cfg, args.out, port=args.port)
    traffic = summary["traffic"]
    print(f"{cfg.name}: wrote {args.out} ({traffic['packets']} packets, "
          f"{len(summary['points'])} points, {len(summary['alarms'])} alarms)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bassim",
        description="BACnet/IP building-automation testbed with attack injection",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_scenario_flags(p):
        p.add_argument("scenario", help="scenario file")
        p.add_argument("--out", required=True, help="bundle output directory")
        p.add_argument("--seed", help="override the scenario seed")
        p.add_argument("--speed", type=_speed, default=_UNSET, metavar="{N|max}",
                       help="sim seconds per wall second, or 'max'")

    p = sub.add_parser("run", help="run a scenario and write its result bundle")
    add_scenario_flags(p)
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("diff", help="compare an attack bundle against a baseline")
    p.add_argument("baseline", help="baseline bundle directory")
    p.add_argument("attack", help="attack bundle directory")
    p.add_argument("--out", help="directory for diff.json and paired.csv")
    p.set_defaults(fn=cmd_diff)

    p = sub.add_parser("pcap-summary", help="flow statistics from a capture file")
    p.add_argument("pcap", help="pcap file")
    p.set_defaults(fn=cmd_pcap_summary)

    p = sub.add_parser("serve", help="run a scenario with the live HTTP API")
    add_scenario_flags(p)
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(fn=cmd_serve)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, DiffError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except PlantFault as exc:
        print(f"fault: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    raise SystemExit(main())
