"""Command line: ``sspinn solve|eval|sweep|check``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys

from .config import ConfigError, load_config
from .field_model import CheckpointError, ConfigurationError
from .optim import TrainingAborted

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


def _parse_grid(text):
    try:
        n = [int(v) for v in text.replace("x", ",").split(",") if v]
    except ValueError:
        raise argparse.ArgumentTypeError(f"grid must look like 1001 or 65x65, got {text!r}") from None
    if not n or min(n) < 2:
        raise argparse.ArgumentTypeError("each grid axis needs at least 2 points")
    return n


def _parse_values(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"values must be comma-separated numbers, got {text!r}") from None


def build_parser():
    p = argparse.ArgumentParser(prog="sspinn", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="verb", required=True)

    s = sub.add_parser("solve", help="train one configuration and write a run directory")
    s.add_argument("--config", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--out")
    s.add_argument("--grid", type=_parse_grid, help="export grid points per axis, e.g. 1001 or 65x65")
    s.add_argument("--warm-start", metavar="CHECKPOINT")

    e = sub.add_parser("eval", help="evaluate a checkpoint on a grid")
    e.add_argument("checkpoint")
    e.add_argument("--out", required=True)
    e.add_argument("--grid", type=_parse_grid)

    w = sub.add_parser("sweep", help="solve for each value of a fixed scalar")
    w.add_argument("--config", required=True)
    w.add_argument("--parameter", required=True, choices=["a", "lam"])
    w.add_argument("--values", required=True, type=_parse_values)
    w.add_argument("--seed", type=int)
    w.add_argument("--out")
    w.add_argument("--warm-start", action="store_true",
                   help="start each value from the previous value's final checkpoint")

    c = sub.add_parser("check", help="run the numerical self-tests")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--n-random", type=int, default=20)
    return p


def _load(args):
    cfg = load_config(args.config)
    over = {"seed": getattr(args, "seed", None), "output_dir": getattr(args, "out", None)}
    cfg = cfg.with_overrides(**over)
    if getattr(args, "grid", None):
        cfg.export = dict(cfg.export, n=args.grid)
    return cfg


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    from . import runner

    try:
        if args.verb == "solve":
            cfg = _load(args)
            out = runner.solve(cfg, warm_start=args.warm_start)
            meta = json.loads((out / "metadata.json").read_text())
            print(f"run directory: {out}")
            print(f"scalars: {meta['scalars']}  final loss: {meta['final_loss']['total']:.6e}")
            if meta.get("oracle"):
                print(f"oracle sup error: {meta['oracle']['sup_error']:.3e}")
        elif args.verb == "eval":
            from .oracles import format_report

            paths, report = runner.evaluate(args.checkpoint, args.out, args.grid)
            print(format_report(report))
            print(f"wrote {len(paths)} files to {args.out}")
        elif args.verb == "sweep":
            cfg = _load(args)
            rows = runner.sweep(cfg, args.parameter, args.values, warm_start=args.warm_start)
            for r in rows:
                print("  ".join(str(v) for v in r))
            if all(r[-1] != "ok" for r in rows):
                return EXIT_NUMERIC
        elif args.verb == "check":
            from .selfcheck import format_rows, run_checks

            rows = run_checks(args.n_random, args.seed)
            print(format_rows(rows))
            if not all(r[3] for r in rows):
                return EXIT_NUMERIC
    except (ConfigError, ConfigurationError, CheckpointError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (TrainingAborted, FloatingPointError, ArithmeticError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
