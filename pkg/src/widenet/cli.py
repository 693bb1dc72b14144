"""Command-line entry point: ``widenet <experiment> [options]``."""

from __future__ import annotations

import argparse
import logging
import sys
import warnings

import numpy as np

from .config import KINDS, ConfigError, load_config
from .experiments import run_experiment
from .training import IntegratorError

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="widenet", description=__doc__)
    sub = parser.add_subparsers(dest="kind", required=True)
    for kind in KINDS:
        p = sub.add_parser(kind)
        p.add_argument("--config", help="TOML file; built-in defaults otherwise")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seeds", type=_int_list, help="comma-separated seeds")
        p.add_argument("--widths", type=_int_list, help="comma-separated widths")
        p.add_argument("--threads", type=int, default=1)
        p.add_argument("--format", choices=("csv", "svg", "both"), default="both")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.threads < 1:
            raise ConfigError("threads: must be >= 1")
        cfg = load_config(args.config, args.kind, {"seeds": args.seeds, "widths": args.widths})
        with warnings.catch_warnings():
            warnings.simplefilter("always")
            report, files = run_experiment(cfg, args.out, args.format, args.threads)
    except ConfigError as exc:
        print(f"widenet: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (IntegratorError, np.linalg.LinAlgError) as exc:
        print(f"widenet: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    for path in files:
        print(path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
