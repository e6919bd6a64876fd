import argparse
import logging
import sys
from typing import List, Optional

import numpy as np

from harness.recipes import recipe_config, recipes
from harness.runner import run
from harness.schema import canonical_json, config_hash, parse_config
from harness.settings import settings
from sim.errors import ConfigError, SimulationError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def _read(path: str) -> str:
    try:
        with open(path) as f:
            return f.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}") from exc


def _execute(config, out_dir: Optional[str]) -> int:
    print(f"\n{'=' * 60}")
    print(f"Running {config.name} ({config.protocol})")
    print(f"{'=' * 60}\n")
    manifest = run(config, out_dir=out_dir)
    print(manifest.summary_line())
    print(f"config {manifest.config_hash[:12]}  {manifest.wall_clock_s:.1f}s  -> {', '.join(manifest.outputs)}")
    return EXIT_OK


def cmd_run(args) -> int:
    config = parse_config(_read(args.config))
    if args.seed is not None:
        config = config.model_copy(update={"seed": args.seed})
    return _execute(config, args.out)


def cmd_recipe(args) -> int:
    return _execute(recipe_config(args.name, seed=args.seed), args.out)


def cmd_list_recipes(args) -> int:
    for name in recipes():
        config = recipe_config(name)
        print(f"{name:<18} {config.protocol}")
    return EXIT_OK


def cmd_validate(args) -> int:
    config = parse_config(_read(args.config))
    if args.echo:
        print(canonical_json(config))
    print(f"OK {config.name} ({config.protocol}) {config_hash(config)}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tunnelscope", description="Wavepacket tunneling and measurement experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run an experiment config file")
    p.add_argument("config")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None, help="output directory")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("recipe", help="run a built-in recipe")
    p.add_argument("name")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None, help="output directory")
    p.set_defaults(func=cmd_recipe)

    p = sub.add_parser("list-recipes", help="list built-in recipes")
    p.set_defaults(func=cmd_list_recipes)

    p = sub.add_parser("validate", help="check a config without running it")
    p.add_argument("config")
    p.add_argument("--echo", action="store_true", help="print the canonical form")
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, settings.LOG_LEVEL.upper(), logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SimulationError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
