#!/usr/bin/env python3
"""
Main entry point for the IBQ Lab package.

This module provides a command-line interface with one subcommand per
experiment step. Exit codes: 0 success, 1 configuration or data error,
2 numeric failure.
"""

import argparse
import sys
from pathlib import Path
from typing import List, Optional, Tuple

from . import __version__
from .cli import LabCLI, parse_quantizers
from .config import RunConfig, load_config, override, save_resolved
from .core.errors import IbqLabError
from .logging_utils import LEVELS, configure_logging
from .tokenizer import SoftVQMode


def _shared_options() -> Tuple[argparse.ArgumentParser, argparse.ArgumentParser, argparse.ArgumentParser]:
    """Parent parsers: logging for every subcommand, seed and data-path mode only where a run reads them."""
    logs = argparse.ArgumentParser(add_help=False)
    logs.add_argument("--log-level", choices=LEVELS, type=str.upper,
                      help="Logging level (default $IBQ_LAB_LOG_LEVEL or INFO)")
    seed = argparse.ArgumentParser(add_help=False)
    seed.add_argument("--seed", type=int, help="Override the run seed")
    data_path = argparse.ArgumentParser(add_help=False)
    data_path.add_argument("--deterministic", action=argparse.BooleanOptionalAction, default=None,
                           help="Single-threaded data path (default from config)")
    return logs, seed, data_path


def _config_options(parser: argparse.ArgumentParser, required: bool = True):
    parser.add_argument("--config", "-c", type=Path, required=required, help="YAML run configuration")
    parser.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="Override one config key, e.g. --set optim.epochs=3 (repeatable)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description="IBQ Lab - visual tokenizers with index backpropagation quantization",
        prog="ibq-lab"
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    subparsers = parser.add_subparsers(
        dest="command",
        help="Available commands",
        title="Commands",
        description="Choose an experiment step"
    )
    logs, seed, data_path = _shared_options()
    training = [logs, seed, data_path]

    train = subparsers.add_parser("train-tokenizer", parents=training, help="Train a visual tokenizer")
    _config_options(train)
    train.add_argument("--dry-run", action="store_true", help="Validate the config and print the parameter count")
    train.add_argument("--resume", action="store_true", help="Continue from the last checkpoint in the output folder")

    compare = subparsers.add_parser("compare-quantizers", parents=training,
                                    help="Train several quantizers under identical settings")
    _config_options(compare)
    compare.add_argument("--quantizers", "-q", default="ibq,vqgan",
                         help="Comma-separated list from ibq, naive, vqgan, lfq, softvq (default: ibq,vqgan)")

    evaluate = subparsers.add_parser("eval-tokenizer", parents=[logs, data_path],
                                     help="Evaluate a tokenizer checkpoint")
    evaluate.add_argument("--checkpoint", type=Path, required=True, help="Tokenizer checkpoint (.ibqa)")
    evaluate.add_argument("--data", type=Path, help="Config whose data section replaces the checkpoint's")
    evaluate.add_argument("--out", type=Path, help="Export folder (default: <checkpoint dir>/eval)")
    evaluate.add_argument("--softvq-mode", choices=[m.value for m in SoftVQMode], default=SoftVQMode.HARD.value,
                          help="Quantization used for Soft VQ checkpoints (default: hard)")

    tokenize = subparsers.add_parser("tokenize", parents=[logs, data_path], help="Turn a dataset into a token file")
    tokenize.add_argument("--checkpoint", type=Path, required=True, help="Tokenizer checkpoint (.ibqa)")
    tokenize.add_argument("--data", type=Path, help="Config whose data section replaces the checkpoint's")
    tokenize.add_argument("--out", type=Path, help="Token file path (default: <output>/tokens.ibqk)")

    train_ar = subparsers.add_parser("train-ar", parents=training, help="Train the autoregressive transformer")
    _config_options(train_ar)
    train_ar.add_argument("--tokens", help="Token file (sets ar.tokens)")
    train_ar.add_argument("--tokenizer", help="Tokenizer checkpoint to check the tokens against")
    train_ar.add_argument("--resume", action="store_true", help="Continue from the last AR checkpoint")

    sample = subparsers.add_parser("sample", parents=[logs, seed], help="Sample images from a trained transformer")
    sample.add_argument("--checkpoint", type=Path, required=True, help="AR checkpoint (.ibqa)")
    sample.add_argument("--tokenizer", type=Path, required=True, help="Tokenizer checkpoint used to decode")
    sample.add_argument("--class", dest="label", type=int, default=0, help="Class to sample (default: 0)")
    sample.add_argument("--n", type=int, default=8, help="Number of samples (default: 8)")
    sample.add_argument("--temperature", type=float, help="Softmax temperature (default: ar.temperature)")
    sample.add_argument("--top-k", type=int, help="Keep the k most likely tokens (default: ar.top_k, 0 = all)")
    sample.add_argument("--out", type=Path, help="Output folder (default: <checkpoint dir>/samples)")

    subparsers.add_parser("quantcheck", parents=[logs, seed], help="Run the gradient-flow diagnostics")
    subparsers.add_parser("ar-presets", parents=[logs], help="Show the large-scale AR presets")
    return parser


def _load(args) -> RunConfig:
    cfg = load_config(args.config, args.overrides)
    return override(cfg, seed=args.seed, deterministic=args.deterministic)


def dispatch(cli: LabCLI, args) -> int:
    if args.command == "train-tokenizer":
        cfg = _load(args)
        return cli.train_tokenizer(cfg, dry_run=args.dry_run, resume=args.resume)
    if args.command == "compare-quantizers":
        cfg = _load(args)
        save_resolved(cfg)
        return cli.compare_quantizers(cfg, parse_quantizers(args.quantizers))
    if args.command == "eval-tokenizer":
        data = load_config(args.data) if args.data else None
        return cli.eval_tokenizer(args.checkpoint, data, args.out, SoftVQMode(args.softvq_mode),
                                  deterministic=args.deterministic)
    if args.command == "tokenize":
        data = load_config(args.data) if args.data else None
        return cli.tokenize(args.checkpoint, args.out, data, deterministic=args.deterministic)
    if args.command == "train-ar":
        cfg = _load(args)
        if args.tokens:
            cfg.ar.tokens = args.tokens
        if args.tokenizer:
            cfg.ar.tokenizer_checkpoint = args.tokenizer
        return cli.train_ar(cfg, resume=args.resume)
    if args.command == "sample":
        return cli.sample(args.checkpoint, args.tokenizer, args.label, args.n, args.seed, args.temperature,
                          args.top_k, args.out)
    if args.command == "quantcheck":
        return cli.quantcheck(args.seed or 0)
    if args.command == "ar-presets":
        return cli.ar_presets()
    raise ValueError(f"unhandled command {args.command!r}")


def run(argv: Optional[List[str]] = None, cli: Optional[LabCLI] = None) -> int:
    """Parse arguments, run one command and return its exit code."""
    parser = build_parser()
    args = parser.parse_args(argv)
    if not args.command:
        parser.print_help()
        return 0
    cli = cli or LabCLI()
    try:
        configure_logging(args.log_level)
        return dispatch(cli, args)
    except IbqLabError as exc:
        cli.error(str(exc), title=type(exc).__name__)
        return exc.exit_code


def main():
    """Main entry point with subcommands."""
    sys.exit(run())


if __name__ == "__main__":
    main()
