"""Command-line entry point: ``anderson-msa <probe> [flags]`` or ``anderson-msa run config.json``."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .harness import PROBES, ConfigError, ExperimentConfig, apply_overrides, run_experiment

EXIT_OK, EXIT_CONFIG, EXIT_PROBE = 0, 2, 3


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--samples", type=int, help="Monte Carlo sample count")
    p.add_argument("--out", default="out", help="output directory (default: ./out)")
    p.add_argument("--override", action="append", default=[], metavar="K=V", help="set a config field, dotted keys allowed")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="anderson-msa", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in PROBES:
        p = sub.add_parser(name, help=f"run the {name} probe on the default config")
        p.add_argument("--config", help="start from this JSON config instead of the defaults")
        _common(p)
    p = sub.add_parser("run", help="run every probe listed in a JSON config")
    p.add_argument("config")
    _common(p)
    return parser


def load_config(args) -> ExperimentConfig:
    path = getattr(args, "config", None)
    if path:
        try:
            raw = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError([f"config: {exc}"]) from exc
    else:
        raw = {}
    if args.command != "run":
        raw["probes"] = [args.command]
    raw = apply_overrides(raw, args.override)
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.samples is not None:
        raw["samples"] = args.samples
    return ExperimentConfig.from_dict(raw)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args)
    except ConfigError as exc:
        for e in exc.errors:
            print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    report = run_experiment(cfg, args.out)
    for name, status in report.status.items():
        print(f"{name}: {status}")
    print(f"artifacts in {report.out}")
    return EXIT_OK if report.ok else EXIT_PROBE


if __name__ == "__main__":
    sys.exit(main())
