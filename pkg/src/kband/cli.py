"""Command line entry point: ``kband run`` and ``kband sweep``."""
from __future__ import annotations

import argparse
import json
import logging
import sys

from .harness import (SWEEP_PARAMS, ConfigError, load_config, run_experiment, sweep, write_experiment,
                      write_sweep)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_REPLICATION = 3


def _int_list(text: str) -> list[int]:
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _float_list(text: str) -> list[float]:
    try:
        return [float(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kband", description="Kernelized bandit experiments with distributed user feedback.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-phase diagnostics")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run every seed of one config")
    run.add_argument("--config", required=True)
    run.add_argument("--out", default="kband_out")
    run.add_argument("--seeds", type=_int_list, help="comma-separated seeds overriding the config")

    sw = sub.add_parser("sweep", help="repeat a config over values of one parameter")
    sw.add_argument("--config", required=True)
    sw.add_argument("--param", required=True, choices=SWEEP_PARAMS)
    sw.add_argument("--values", required=True, type=_float_list)
    sw.add_argument("--out", default="kband_sweep")
    sw.add_argument("--seeds", type=_int_list)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        if args.command == "run":
            res = run_experiment(cfg, args.seeds)
            write_experiment(res, args.out)
            print(json.dumps(res.aggregate(), indent=2, sort_keys=True))
            failed = bool(res.failures)
        else:
            rows, results = sweep(cfg, args.param, args.values, args.seeds)
            write_sweep(rows, args.out, args.param)
            for row in rows:
                print(json.dumps(row, sort_keys=True))
            failed = any(r.failures for r in results)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if failed:
        print("one or more replications failed; see aggregate.json", file=sys.stderr)
        return EXIT_REPLICATION
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
