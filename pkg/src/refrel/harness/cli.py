"""Command line entry point: ``refrel {gen,train,eval,ablate,visualize,run}``.

Failures print ``error: <category>: <message>`` on one line to stderr and
exit with status 1 (2 for usage errors, as argparse does).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from ..errors import RefrelError
from .config import RunConfig


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file overriding any subset of the default run config")
    common.add_argument("--seed", type=int, help="master seed (dataset and every model)")
    common.add_argument("--out", help="run directory (default: runs/default)")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    parser = argparse.ArgumentParser(prog="refrel", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("gen", parents=[common], help="generate the synthetic dataset")
    p = sub.add_parser("train", parents=[common], help="train one stage")
    p.add_argument("--stage", required=True, choices=["proposals", "predicate"])
    p = sub.add_parser("eval", parents=[common], help="evaluate on the test split")
    p.add_argument("--mode", default="full", choices=["full", "cp", "pa", "all"])
    sub.add_parser("ablate", parents=[common], help="predicate input and proposal-source ablations")
    p = sub.add_parser("visualize", parents=[common], help="render predictions as pixmaps")
    p.add_argument("--mode", default="full", choices=["full", "cp", "pa"])
    p.add_argument("-n", type=int, default=8, help="number of queries to render")
    sub.add_parser("run", parents=[common], help="gen, train both stages, eval all modes")
    return parser


def load_config(args):
    config = RunConfig.load(args.config) if args.config else RunConfig()
    data = config.to_dict()
    if args.seed is not None:
        data["seed"] = args.seed
    if args.out is not None:
        data["out"] = args.out
    return RunConfig.from_dict(data)


def dispatch(args):
    from . import pipeline
    from .visualize import cmd_visualize

    config = load_config(args)
    if args.command == "gen":
        return pipeline.cmd_gen(config)
    if args.command == "train":
        pipeline.cmd_train(config, args.stage)
        return {"stage": args.stage, "checkpoints": str(config.out_dir / "checkpoints")}
    if args.command == "eval":
        return pipeline.cmd_eval(config, args.mode)
    if args.command == "ablate":
        table = pipeline.cmd_ablate(config)
        print(pipeline.format_ablation(table), end="")
        return None
    if args.command == "visualize":
        path = config.out_dir / f"predictions_{args.mode}.jsonl"
        if not path.exists():
            from ..errors import PrerequisiteError

            raise PrerequisiteError("eval", f"no predictions at {path}; run 'eval --mode {args.mode}' first")
        ds = pipeline._load_dataset(config)
        files = cmd_visualize(ds, path, config.out_dir / "visualize", args.n)
        return {"written": [str(f) for f in files]}
    if args.command == "run":
        return pipeline.cmd_run(config)
    raise AssertionError(args.command)


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        result = dispatch(args)
    except RefrelError as exc:
        print(f"error: {exc.category}: {_one_line(exc)}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: not_found: {_one_line(exc)}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: io: {_one_line(exc)}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"error: invalid_argument: {_one_line(exc)}", file=sys.stderr)
        return 1
    if result is not None:
        print(json.dumps(result, indent=1, sort_keys=True))
    return 0


def _one_line(exc):
    return " ".join(str(exc).split())


if __name__ == "__main__":
    sys.exit(main())
