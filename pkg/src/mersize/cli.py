"""Command-line entry point: ``mersize run ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

from .feeder import FeederError
from .pipeline import ConfigError, RunConfig, report_text, run
from .routing import RoadNetworkError


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mersize", description="Estimate mobile energy resource ratings by Monte Carlo simulation.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="simulate a horizon and write the sizing report")
    p.add_argument("--config", help="JSON file with run settings; flags override it")
    p.add_argument("--feeder", help="feeder file, or a bundled name: ieee13, ieee123")
    p.add_argument("--reliability", help="reliability CSV (default: bundled component table)")
    p.add_argument("--roads", help="road network CSV (default: bundled overlay for bundled feeders)")
    p.add_argument("--profile", help="hourly load multiplier CSV applied to every load")
    p.add_argument("--years", type=int, help="simulated years (default 200)")
    p.add_argument("--seed", type=int, help="random seed (default 0)")
    p.add_argument("--install-min", type=float, dest="installation_minutes", help="MER installation time, minutes (default 15)")
    p.add_argument("--replications", type=int, help="independent horizon segments (default 1)")
    p.add_argument("--workers", type=int, help="worker processes for power flow (default 1)")
    p.add_argument("--no-reconfig", action="store_true", default=None, help="keep tie switches open")
    p.add_argument("--lossless-base", action="store_true", default=None, help="use load sums instead of power flow")
    p.add_argument("--dump-diagnostics", help="write per-contingency JSON lines here")
    p.add_argument("--dump-powerflow", help="write post-contingency bus voltages (CSV) here")
    p.add_argument("--out", help="directory for report.json and report.txt (default: current directory)")
    return parser


def config_from_args(args: argparse.Namespace) -> RunConfig:
    settings: dict = {}
    if args.config:
        try:
            settings.update(json.loads(Path(args.config).read_text(encoding="utf-8")))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
    for key in (
        "feeder", "reliability", "roads", "profile", "years", "seed", "installation_minutes",
        "replications", "workers", "lossless_base", "dump_diagnostics", "dump_powerflow", "out",
    ):
        value = getattr(args, key)
        if value is not None:
            settings[key] = value
    if args.no_reconfig:
        settings["reconfigure"] = False
    settings.setdefault("out", ".")
    if "feeder" not in settings:
        raise ConfigError("--feeder is required (on the command line or in --config)")
    return RunConfig.from_mapping(settings)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        config = config_from_args(args)
        started = time.perf_counter()
        result = run(config)
    except (ConfigError, FeederError, RoadNetworkError, ValueError, KeyError, OSError) as exc:
        print(f"mersize: error: {exc}", file=sys.stderr)
        return 2
    sys.stdout.write(report_text(result))
    print(f"finished in {time.perf_counter() - started:.1f} s; reports in {Path(config.out).resolve()}", file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
