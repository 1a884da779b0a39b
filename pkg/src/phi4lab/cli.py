"""Command line entry point: one subcommand per scenario.

Exit status: 0 when every criterion passes, 1 when one fails (named on
stderr), 2 for usage or configuration errors.
"""

from __future__ import annotations

import argparse
import logging
import sys

from .config import PROFILES, parse_config
from .errors import ConfigurationError
from .experiments import SCENARIOS, run_scenario

log = logging.getLogger("phi4lab")


def _global_flags(parser: argparse.ArgumentParser, suppress: bool) -> None:
    default = argparse.SUPPRESS if suppress else None
    parser.add_argument("--config", default=default, help="TOML config file")
    parser.add_argument("--seed", type=int, default=default, help="root seed override")
    parser.add_argument("--out-dir", default=default, help="output directory override")
    parser.add_argument("--profile", choices=sorted(PROFILES), default=default,
                        help="default profile")
    parser.add_argument("-v", "--verbose", action="store_true",
                        default=argparse.SUPPRESS if suppress else False)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="phi4lab", description=__doc__.splitlines()[0])
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="scenario", metavar="SCENARIO", required=True)
    for name in SCENARIOS + ("all",):
        sp = sub.add_parser(name, help="every scenario in turn" if name == "all" else
                            f"run the {name} scenario")
        # global flags are accepted after the subcommand too
        _global_flags(sp, suppress=True)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    overrides = {}
    if args.seed is not None:
        overrides["root_seed"] = args.seed
    if args.out_dir is not None:
        overrides["output_dir"] = args.out_dir
    try:
        cfg = parse_config(args.config, overrides=overrides, profile=args.profile)
    except (ConfigurationError, OSError) as err:
        print(f"phi4lab: {err}", file=sys.stderr)
        return 2
    names = SCENARIOS if args.scenario == "all" else (args.scenario,)
    failing = []
    for name in names:
        log.info("running %s", name)
        try:
            res = run_scenario(name, cfg)
        except ConfigurationError as err:
            print(f"phi4lab: {err}", file=sys.stderr)
            return 2
        for v in res.verdicts:
            mark = "PASS" if v.passed else "FAIL"
            print(f"{mark} {name}/{v.criterion}: observed={v.observed:.6g} "
                  f"threshold={v.threshold:.6g}")
        print(f"{name}: verdict written to {res.verdict_path} ({res.wall_time:.1f} s)")
        failing += [f"{name}/{c}" for c in res.failing]
    if failing:
        print("failing criteria: " + ", ".join(failing), file=sys.stderr)
        return 1
    return 0
