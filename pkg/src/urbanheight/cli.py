"""Command-line entry point.

Subcommands: ``synth``, ``sample``, ``features``, ``train``, ``map``,
``validate``, ``compare`` and ``run``. Exit codes: 0 success, 2 bad
configuration or arguments, 3 a stage failed (a ``.partial`` marker is left
in the output directory).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .exceptions import ConfigError, StageError, UrbanHeightError
from .pipeline import STAGES, Pipeline, load_config

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_STAGE = 3


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="urbanheight", description="Urban building height mapping.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    synth = sub.add_parser("synth", help="write a seeded synthetic scene and a config for it")
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument("--out", required=True, help="directory for the generated inputs")
    synth.add_argument("--size", type=int, default=None, help="grid rows and columns")
    synth.add_argument("--noise", type=float, default=None, help="lidar height noise sigma (m)")
    synth.add_argument("--n-trees", type=int, default=None, help="trees per forest in the config")
    synth.add_argument("--holdout", type=float, default=0.2, help="hold-out fraction in the config")

    for name in STAGES + ("run",):
        p = sub.add_parser(name, help="run all stages" if name == "run" else f"run the {name} stage")
        p.add_argument("--config", required=True, help="JSON config file")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", default=None, help="override the output directory")
    return parser


def _synth(args) -> int:
    from .synthetic import SynthParams, generate_synthetic_scene, write_synthetic_scene

    params = SynthParams()
    if args.size is not None:
        params.n_rows = params.n_cols = args.size
    if args.noise is not None:
        params.noise_sigma = args.noise
    forest = {"n_trees": args.n_trees} if args.n_trees else None
    scene = generate_synthetic_scene(args.seed, params)
    path = write_synthetic_scene(scene, args.out, forest=forest, holdout_fraction=args.holdout)
    print(path)
    return EXIT_OK


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "synth":
            return _synth(args)
        cfg = load_config(args.config, seed=args.seed, out=args.out)
        pipe = Pipeline(cfg)
        stages = STAGES if args.command == "run" else (args.command,)
        results = pipe.run(stages)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StageError as exc:
        print(f"stage error: {exc}", file=sys.stderr)
        return EXIT_STAGE
    except UrbanHeightError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE
    for name in ("validate", "compare"):
        for rep in results.get(name) or []:
            print(json.dumps({"stage": name, "stratum": rep.stratum, "n": rep.n,
                              "r": rep.pearson_r, "rmse": rep.rmse}))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
