"""Command-line entry point: ``rdlearn <subcommand>``.

Failures print one line ``rdlearn: error: <ErrorType>: <message>`` to stderr
and exit with status 2 (bad config or arguments) or 1 (anything else).
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import __version__
from . import experiment as exp
from .config import ConfigError, load_config, parse_override, preset_names
from .training import ObjectiveKind

log = logging.getLogger("rdlearn")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="YAML experiment config")
    p.add_argument("--preset", help=f"named preset ({', '.join(preset_names())})")
    p.add_argument("--seed", type=int, help="master seed (overrides config)")
    p.add_argument("--output", help="output directory (overrides config output_dir)")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config field, e.g. --set train.epochs=50")


def _config(args):
    overrides = [parse_override(o) for o in args.overrides]
    if args.seed is not None:
        overrides.append(("seed", args.seed))
    if args.output is not None:
        overrides.append(("output_dir", args.output))
    return load_config(args.config, args.preset, overrides)


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="rdlearn", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"rdlearn {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("generate-data", help="build target instance(s) and train/val datasets")
    _add_config_args(p)

    p = sub.add_parser("train", help="train one (objective, seed) cell")
    _add_config_args(p)
    p.add_argument("--objective", required=True, help=f"one of {[k.value for k in ObjectiveKind]}")
    p.add_argument("--epochs", type=int, help="override train.epochs")

    p = sub.add_parser("sample", help="generate samples from a checkpoint by block Gibbs")
    _add_config_args(p)
    p.add_argument("--objective", help="with --config/--preset: sample this trained cell")
    p.add_argument("--checkpoint", help="explicit RBM parameter file")
    p.add_argument("--init", help="explicit dataset of initial states")
    p.add_argument("--steps", type=int, help="block Gibbs steps (default from config, else 100)")
    p.add_argument("--count", type=int, help="number of samples (default: size of --init)")
    p.add_argument("--out", help="explicit output dataset path")

    p = sub.add_parser("evaluate", help="compute metrics for every sampled cell")
    _add_config_args(p)

    p = sub.add_parser("report", help="run every stage: data, train, sample, evaluate")
    _add_config_args(p)

    sub.add_parser("presets", help="list preset names")
    return ap


def _cmd_sample(args) -> None:
    if args.checkpoint:
        if not args.init or not args.out:
            raise UsageError("--checkpoint requires --init and --out")
        seed = 0 if args.seed is None else args.seed
        steps = 100 if args.steps is None else args.steps
        for p in (args.checkpoint, args.init):
            if not Path(p).is_file():
                raise FileNotFoundError(f"{p} does not exist")
        exp.sample_from_checkpoint(args.checkpoint, args.init, steps, args.count, seed, args.out)
        print(args.out)
        return
    if not args.objective:
        raise UsageError("sample needs --checkpoint/--init/--out or --config/--preset with --objective")
    cfg = _config(args)
    if args.steps is not None:
        cfg.sampling.steps = args.steps
    if args.count is not None:
        cfg.sampling.count = args.count
    print(exp.sample_one(cfg, args.objective, cfg.seed))


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                            format="%(levelname)s %(name)s: %(message)s")
        if args.command == "presets":
            print("\n".join(preset_names()))
        elif args.command == "generate-data":
            cfg = _config(args)
            for key, (tr, va) in exp.generate_data(cfg).items():
                print(f"{key}\t{tr}\t{va}")
        elif args.command == "train":
            cfg = _config(args)
            res = exp.train_one(cfg, args.objective, cfg.seed, epochs=args.epochs)
            last = res.metrics[-1].r_theta if res.metrics else res.initial_r_theta
            print(f"{exp.Layout(cfg.output_path()).checkpoint(ObjectiveKind.parse(args.objective).value, cfg.seed)}"
                  f"\tr_theta={last!r}")
        elif args.command == "sample":
            _cmd_sample(args)
        elif args.command == "evaluate":
            print(exp.evaluate_runs(_config(args))["summary"])
        elif args.command == "report":
            print(exp.run_all(_config(args), progress=lambda m: log.info(m)))
    except (UsageError, ConfigError) as e:
        print(f"rdlearn: error: {type(e).__name__}: {' '.join(str(e).split())}", file=sys.stderr)
        return 2
    except Exception as e:  # noqa: BLE001 - single-line error contract
        log.debug("failure", exc_info=True)
        print(f"rdlearn: error: {type(e).__name__}: {' '.join(str(e).split())}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
