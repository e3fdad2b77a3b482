#!/usr/bin/env python3
"""Regenerate the reference datasets from the shipped scenarios.

Runs baseline, fdi, and dos end to end (unpaced), writes each bundle under
datasets/<scenario>/, then writes attack-vs-baseline diff reports. The whole
thing is deterministic: rerunning produces byte-identical trend and traffic
artifacts, so the output directory is safe to wipe.
"""

import argparse
import shutil
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from bassim.diffreport import write_report
from bassim.runner import run
from bassim.scenario import parse_scenario

REPO = Path(__file__).resolve().parent.parent
SCENARIOS = ("baseline", "fdi", "dos")


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=REPO / "datasets",
                    help="output root (default: datasets/ in the repo)")
    ap.add_argument("--keep", action="store_true",
                    help="fail instead of overwriting an existing output root")
    args = ap.parse_args(argv)

    if args.out.exists():
        if args.keep:
            ap.error(f"{args.out} already exists")
        shutil.rmtree(args.out)

    for name in SCENARIOS:
        cfg = parse_scenario(REPO / "scenarios" / f"{name}.toml")
        out_dir = args.out / name
        t0 = time.monotonic()
        summary = run(cfg, out_dir)
        wall = time.monotonic() - t0
        alarms = len(summary["alarms"])
        print(f"{name}: {summary['traffic']['packets']} packets, "
              f"{alarms} alarm(s), {wall:.1f}s wall -> {out_dir}")

    for attack in ("fdi", "dos"):
        report_dir = args.out / f"{attack}-vs-baseline"
        write_report(args.out / "baseline", args.out / attack, report_dir)
        print(f"{attack}-vs-baseline: diff.json + paired.csv -> {report_dir}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
