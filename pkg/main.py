"""
main.py - Entry point for the botdna command-line tool.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from version import __app_name__, __version__

_logger = logging.getLogger("botdna")

_FORMAT  = "%(asctime)s  %(levelname)s  %(message)s"
_DATEFMT = "%H:%M:%S"

def _configure_logging(verbose: bool = False, log_file: str | None = None):
    """stderr handler always; file handler on request, degrading to a no-op."""
    for h in list(_logger.handlers):
        _logger.removeHandler(h)
        h.close()
    _logger.setLevel(logging.DEBUG if verbose else logging.INFO)

    stream = logging.StreamHandler(sys.stderr)
    stream.setFormatter(logging.Formatter(_FORMAT, datefmt=_DATEFMT))
    _logger.addHandler(stream)

    if log_file:
        try:
            fh = logging.FileHandler(os.path.expanduser(log_file), encoding="utf-8")
            fh.setFormatter(logging.Formatter(_FORMAT, datefmt=_DATEFMT))
            _logger.addHandler(fh)
        except OSError:
            # Unwritable log path: keep going with stderr only.
            _logger.addHandler(logging.NullHandler())
            _logger.warning(f"cannot write log file {log_file}; logging to stderr only")


# ---------------------------------------------------------------------------
# Arguments
# ---------------------------------------------------------------------------

def _common_flags() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="JSON config file")
    common.add_argument("--seed", type=int,
                        help="split and balancing seed (training seeds come from train.seeds)")
    common.add_argument("--alphabet", choices=("type3", "content5"), type=str.lower)
    common.add_argument("--fusion", choices=("concat", "gmu", "crossmodal", "text", "vision"),
                        type=str.lower)
    common.add_argument("--encoder", choices=("toy", "precomputed"), type=str.lower)
    common.add_argument("--mode", choices=("vgg16", "alexnet"), type=str.lower,
                        help="vision output shape preset")
    common.add_argument("--features", metavar="PATH", help="precomputed features (BWTS1)")
    common.add_argument("--out", metavar="DIR", help="output directory")
    common.add_argument("--log-file", metavar="PATH")
    common.add_argument("--verbose", "-v", action="store_true")
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _common_flags()
    parser = argparse.ArgumentParser(
        prog=__app_name__,
        description="Digital-DNA bot detection: encode timelines, render them as "
                    "images, and train multimodal classifiers.")
    parser.add_argument("--version", action="version", version=f"{__app_name__} {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("ingest", parents=[common], help="validate, filter and split a JSONL corpus")
    p.add_argument("input", nargs="?", help="raw JSONL corpus (default: paths.corpus)")
    p.add_argument("--balance", action="store_true", default=None,
                   help="downsample the majority class")
    p.add_argument("--max-tweets", type=int, metavar="N", help="keep the N most recent tweets")
    p.add_argument("--backfill-entities", action="store_true", default=None,
                   help="count URLs / hashtags / mentions from text when absent")

    sub.add_parser("encode-dna", parents=[common], help="encode timelines as digital DNA")
    sub.add_parser("render-images", parents=[common], help="render DNA sequences as images")

    p = sub.add_parser("lcs-curve", parents=[common], help="LCS curve and group verdict")
    p.add_argument("--plot", action="store_true", help="also write an SVG plot")

    sub.add_parser("train", parents=[common], help="multi-seed training protocol")

    p = sub.add_parser("evaluate", parents=[common], help="re-score checkpoints on the test split")
    p.add_argument("--checkpoint", metavar="PATH")

    p = sub.add_parser("predict", parents=[common], help="label users with a checkpoint")
    p.add_argument("--users", metavar="ID[,ID...]", help="comma-separated user ids")
    p.add_argument("--input", metavar="PATH", help="JSONL of user records (default: corpus)")
    p.add_argument("--checkpoint", metavar="PATH")
    return parser


def _overrides(args: argparse.Namespace) -> dict:
    """Dotted config keys set by flags; None means 'not given'."""
    return {
        "seed":                     args.seed,
        "alphabet":                 args.alphabet,
        "fusion":                   args.fusion,
        "encoder.kind":             args.encoder,
        "encoder.mode":             args.mode,
        "paths.features":           args.features,
        "paths.out":                args.out,
        "ingest.balance":           getattr(args, "balance", None),
        "ingest.max_tweets":        getattr(args, "max_tweets", None),
        "ingest.backfill_entities": getattr(args, "backfill_entities", None),
    }


def _dispatch(pipeline, args: argparse.Namespace):
    if args.command == "ingest":
        return pipeline.ingest(args.input)
    if args.command == "encode-dna":
        return pipeline.encode_dna()
    if args.command == "render-images":
        return pipeline.render_images()
    if args.command == "lcs-curve":
        return pipeline.lcs_curve(plot=args.plot)
    if args.command == "train":
        return pipeline.train()
    if args.command == "evaluate":
        return pipeline.evaluate(args.checkpoint)
    users = [u.strip() for u in args.users.split(",") if u.strip()] if args.users else None
    return pipeline.predict(users, args.input, args.checkpoint)


# ---------------------------------------------------------------------------
# Entry
# ---------------------------------------------------------------------------

def run(argv: list[str] | None = None) -> int:
    """Parse, configure, run one command. 0 on success, 1 on a botdna error."""
    args = build_parser().parse_args(argv)      # usage errors exit 2
    _configure_logging(args.verbose, args.log_file)

    from config import build_config, load_config_file
    from errors import BotDnaError
    from pipeline import Pipeline

    _logger.debug(f"{__app_name__} {__version__}  python {sys.version.split()[0]}  "
                  f"command={args.command}")
    try:
        file_data = load_config_file(args.config) if args.config else None
        cfg = build_config(file_data, _overrides(args))
        result = _dispatch(Pipeline(cfg), args)
    except BotDnaError as exc:
        _logger.error(f"{args.command}: {exc}")
        return 1
    except Exception:
        _logger.exception(f"EXCEPTION in {args.command}")
        raise

    if args.command == "predict":
        for row in result:
            sys.stdout.write(json.dumps(row, separators=(",", ":")) + "\n")
    else:
        sys.stdout.write(json.dumps(result, indent=2, ensure_ascii=False) + "\n")
    return 0


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
