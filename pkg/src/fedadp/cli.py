"""Command line entry point.

    fedadp run CONFIG [--out-dir DIR] [--seed N] [--threads N]
    fedadp suite PRESET... [--mnist-dir DIR] [--out-dir DIR] [--seed N] [--threads N]
                           [--rounds N] [--clients N] [--take N]
    fedadp heatmap FI_CSV OUT.pgm [--shape ROWSxCOLS] [--png OUT.png]

Exit status: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from .config import load_config
from .errors import ConfigError, FedAdpError, UsageError
from .experiment import run_experiment
from .importance import read_csv
from .presets import PRESETS, base_document, preset_configs, run_preset
from .report import emit_heatmap, plot_heatmaps

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2


def default_out_dir() -> Path:
    return Path(os.environ.get("FEDADP_OUT_DIR", "fedadp-out"))


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out-dir", type=Path, help="output root (default $FEDADP_OUT_DIR or ./fedadp-out)")
    common.add_argument("--seed", type=int, help="override the master seed")
    common.add_argument("--threads", type=int, default=1, help="client worker threads; speed only")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="fedadp", description=__doc__.split("\n\n")[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run = sub.add_parser("run", parents=[common], help="run one experiment from a TOML config or manifest")
    run.add_argument("config", type=Path)

    suite = sub.add_parser("suite", parents=[common], help="run named experiment presets")
    suite.add_argument("presets", nargs="+", metavar="PRESET")
    suite.add_argument("--mnist-dir", type=Path, default=os.environ.get("FEDADP_MNIST_DIR"),
                       help="directory holding train-{images,labels}-idx*-ubyte ($FEDADP_MNIST_DIR)")
    suite.add_argument("--rounds", type=int)
    suite.add_argument("--clients", type=int)
    suite.add_argument("--take", type=int)

    heat = sub.add_parser("heatmap", help="render an importance CSV as a PGM")
    heat.add_argument("csv", type=Path)
    heat.add_argument("out", type=Path)
    heat.add_argument("--shape", help="ROWSxCOLS when the feature count is not a square")
    heat.add_argument("--png", type=Path, help="also write a matplotlib PNG")
    return p


def _cmd_run(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    out = args.out_dir or default_out_dir() / cfg.name
    result = run_experiment(cfg, out, args.threads)
    print(f"{cfg.name}: final accuracy {result.final_accuracy:.4f} -> {out}")
    return EXIT_OK


def _cmd_suite(args) -> int:
    unknown = [n for n in args.presets if n not in PRESETS]
    if unknown:
        print(f"unknown preset(s): {', '.join(unknown)}; available: {', '.join(PRESETS)}", file=sys.stderr)
        return EXIT_USAGE
    overrides: dict = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    train = {k: v for k, v in (("rounds", args.rounds), ("clients", args.clients)) if v is not None}
    if train:
        overrides["train"] = train
    if args.take is not None:
        overrides["data"] = {"take": args.take}
    base = base_document(args.mnist_dir)
    # validate every curve before spending time on any of them
    for name in args.presets:
        preset_configs(name, base, overrides)
    out_root = args.out_dir or default_out_dir()
    for name in args.presets:
        results = run_preset(name, base, out_root, args.threads, overrides)
        for curve, res in results.items():
            print(f"{name}/{curve}: final accuracy {res.final_accuracy:.4f}")
    return EXIT_OK


def _cmd_heatmap(args) -> int:
    fi = read_csv(args.csv)
    shape = None
    if args.shape:
        try:
            rows, cols = (int(v) for v in args.shape.lower().split("x"))
        except ValueError:
            raise UsageError(f"--shape must look like 28x28, got {args.shape!r}")
        shape = (rows, cols)
    emit_heatmap(fi, args.out, shape)
    if args.png:
        plot_heatmaps({args.csv.stem: fi}, args.png, shape)
    return EXIT_OK


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as e:
        print(f"fedadp: {e}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as e:  # --help
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    if getattr(args, "threads", 1) < 1:
        print("fedadp: --threads must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    handler = {"run": _cmd_run, "suite": _cmd_suite, "heatmap": _cmd_heatmap}[args.command]
    try:
        return handler(args)
    except (ConfigError, UsageError) as e:
        print(f"fedadp: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (FedAdpError, OSError) as e:
        print(f"fedadp: {e}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
