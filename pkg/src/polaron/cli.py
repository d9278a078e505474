"""Command line entry point: ``polaron <kind> --config <path>``."""
from __future__ import annotations

import argparse
import logging
import sys

from .config import KINDS, ConfigError, load
from .experiments import run_experiment

EXIT_OK, EXIT_VALIDATION, EXIT_GUARD = 0, 2, 3


def parse_args(argv=None) -> argparse.Namespace:
    ap = argparse.ArgumentParser(prog="polaron", description="Run a canned particle-field experiment.")
    ap.add_argument("kind", choices=KINDS)
    ap.add_argument("--config", required=True, help="JSON experiment configuration")
    ap.add_argument("--out", help="output directory (overrides the config)")
    ap.add_argument("--threads", type=int, default=1, help="FFT and quadrature workers")
    ap.add_argument("--seed", type=int, default=None, help="unsigned 64-bit seed for random perturbations")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap.parse_args(argv)


def main(argv=None) -> int:
    args = parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.threads < 1:
            raise ConfigError("--threads must be at least 1")
        if args.seed is not None and not 0 <= args.seed < 2**64:
            raise ConfigError("--seed must be an unsigned 64-bit integer")
        cfg = load(args.config, args.kind)
        if args.seed is not None:
            from dataclasses import replace

            cfg = replace(cfg, seed=args.seed)
    except ConfigError as exc:
        print(f"polaron: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    outcome = run_experiment(cfg, args.out, args.threads)
    for check in outcome.checks:
        mark = "PASS" if check.passed else "FAIL"
        print(f"{mark} {check.name}: {check.value} (threshold {check.threshold})")
    if outcome.failure is not None:
        print(f"polaron: {outcome.failure['category']}: {outcome.failure['message']}", file=sys.stderr)
    print(f"report: {outcome.out_dir / 'report.ndjson'}")
    return outcome.exit_code


if __name__ == "__main__":
    sys.exit(main())
