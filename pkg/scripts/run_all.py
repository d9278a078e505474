#!/usr/bin/env python3
"""Run every shipped config and print one summary line per experiment.

Usage: python3 scripts/run_all.py [--out runs] [--threads 1] [--only name ...]
"""
import argparse
import sys
import time
from pathlib import Path

from polaron.config import ConfigError, load
from polaron.experiments import run_experiment

ROOT = Path(__file__).resolve().parent.parent
# configs whose file name is not the experiment kind
KIND_OF = {
    "travel_rest": "travel",
    "travel_sonic": "travel",
    "travel_subsonic": "travel",
    "inertial": "simulate",
    "physical_units": "simulate",
}


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs")
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--only", nargs="*", help="config names (file stems) to run")
    args = ap.parse_args()
    paths = sorted((ROOT / "configs").glob("*.json"))
    if args.only:
        paths = [p for p in paths if p.stem in args.only]
    worst = 0
    for path in paths:
        try:
            cfg = load(path, KIND_OF.get(path.stem, path.stem))
        except ConfigError as exc:
            print(f"{path.stem:16s} INVALID {exc}")
            worst = max(worst, 2)
            continue
        start = time.perf_counter()
        outcome = run_experiment(cfg, Path(args.out) / path.stem, args.threads)
        failed = [c.name for c in outcome.checks if not c.passed]
        status = "PASS" if outcome.passed else "FAIL"
        extra = f" failed: {', '.join(failed)}" if failed else ""
        if outcome.failure:
            extra += f" aborted: {outcome.failure['message']}"
        print(f"{path.stem:16s} {status} {time.perf_counter() - start:7.1f}s{extra}", flush=True)
        worst = max(worst, outcome.exit_code)
    return worst


if __name__ == "__main__":
    sys.exit(main())
