"""``wbsnow`` command line."""

from __future__ import annotations

import argparse
import logging
import sys

from wbsnow import __version__, pipeline
from wbsnow import config as cfgmod
from wbsnow.grid import GridError, SelectionError
from wbsnow.io import DatasetError
from wbsnow.thermo import ConvergenceError

COMMANDS = {
    "synth": (pipeline.run_synth, "generate a synthetic product triplet, precip, mask and gauges"),
    "wetbulb": (pipeline.run_wetbulb, "wet-bulb temperature from air temperature, humidity, pressure"),
    "fuse": (pipeline.run_fuse, "estimate product errors against gauges and fuse products"),
    "snowmask": (pipeline.run_snowmask, "daily potential-snowfall masks from the ensemble"),
    "areas": (pipeline.run_areas, "daily, seasonal and annual potential-snowfall areas"),
    "exceedance": (pipeline.run_exceedance, "annual snowfall frequency and exceedance masks"),
    "transition": (pipeline.run_transition, "transition latitudes and retraction rates per slice"),
    "spr": (pipeline.run_spr, "annual snowfall-to-precipitation ratio"),
    "trend": (pipeline.run_trend, "Theil-Sen / MBB Mann-Kendall trend reports and maps"),
    "validate": (pipeline.run_validate, "R2, RBIAS, POD, FAR and CSI against gauges"),
}

EXPECTED_ERRORS = (cfgmod.ConfigError, SelectionError, DatasetError, GridError, ConvergenceError,
                   ValueError, FileNotFoundError)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config key (dotted keys, JSON values); repeatable")
    common.add_argument("--seed", type=int, help="random seed")
    common.add_argument("--threads", type=int, help="worker threads for per-pixel work")
    common.add_argument("--out", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="wbsnow", description=__doc__)
    parser.add_argument("--version", action="version", version=f"wbsnow {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        sub.add_parser(name, parents=[common], help=help_text, description=help_text)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    try:
        cfg = cfgmod.load(args.config, overrides)
        if args.out:
            cfg["out"] = args.out
        if args.threads is not None:
            cfg["threads"] = args.threads
        cfgmod.validate(cfg)
        func, _ = COMMANDS[args.command]
        func(cfg)
    except EXPECTED_ERRORS as exc:
        print(f"wbsnow {args.command}: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
