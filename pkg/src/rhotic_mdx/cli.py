"""Command line: ``rhotic-mdx {extract,train,evaluate,analyze,version}``.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 internal error.
"""

from __future__ import annotations

import argparse
import logging
import sys

from . import __version__
from .dataset import DatasetError
from .formants import FormantError
from .inversion import TVFormatError
from .neural.checkpoint import CheckpointError
from .neural.optim import DivergenceError
from .pipeline import ConfigError, cmd_analyze, cmd_evaluate, cmd_extract, cmd_train, load_config
from .segmentation import AnnotationError, TextGridError
from .series import SeriesError
from .signal_io import AudioError
from .stats import StatsError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3

DATA_ERRORS = (
    DatasetError,
    FormantError,
    TVFormatError,
    CheckpointError,
    DivergenceError,
    AnnotationError,
    TextGridError,
    SeriesError,
    AudioError,
    StatsError,
    FileNotFoundError,
)

COMMANDS = {"extract": cmd_extract, "train": cmd_train, "evaluate": cmd_evaluate, "analyze": cmd_analyze}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="rhotic-mdx", description="Rhoticity feature extraction, LOPO training and analysis.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", metavar="PATH", help="JSON run configuration")
        p.add_argument("--set", metavar="KEY=VALUE", action="append", default=[], dest="overrides",
                       help="override a config value (dotted keys for nested sections)")
        p.add_argument("--out", metavar="DIR", required=True, help="run directory")
        p.add_argument("--seed", type=int, metavar="N")
        p.add_argument("--feature-set", metavar="NAME")
        p.add_argument("--grid", action="store_true", help="grid-search the hyperparameter space")
    sub.add_parser("version")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose > 1 else logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    if args.command == "version":
        print(f"rhotic-mdx {__version__}")
        return EXIT_OK
    flags = {"seed": args.seed, "grid": True if args.grid else None}
    if args.feature_set:
        key = "analyze_feature_set" if args.command == "analyze" else "feature_sets"
        flags[key] = args.feature_set if key == "analyze_feature_set" else [args.feature_set]
    try:
        cfg = load_config(args.config, args.overrides, **flags)
        return COMMANDS[args.command](cfg, args.out)
    except ConfigError as exc:
        print(f"rhotic-mdx: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DATA_ERRORS as exc:
        print(f"rhotic-mdx: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001
        logging.getLogger(__name__).debug("internal error", exc_info=True)
        print(f"rhotic-mdx: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
