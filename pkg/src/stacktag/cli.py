"""Command-line entry points.

Verbs: synth, compare-modalities, compare-combinations, compare-fusion,
train, predict, score. Exit codes: 0 success, 2 validation error, 3 IO
error, 4 training divergence.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from . import harness
from .config import ENV_LOG_LEVEL, ENV_OUT, MetricSettings, RunConfig, load_config, parse_config
from .errors import StacktagError, ValidationError

log = logging.getLogger("stacktag")

LOG_LEVELS = ("debug", "info", "warning", "error")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stacktag",
        description="Multi-label tagging via stacked multimodal ensembles.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, needs_config: bool) -> None:
        p.add_argument("--config", type=Path, required=needs_config,
                       help="path to the run config JSON")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config seed")
        p.add_argument("--out", type=Path, default=None,
                       help="output directory (env STACKTAG_OUT also works)")
        p.add_argument("--threads", type=int, default=None,
                       help="parallel training units (results are identical at any value)")
        p.add_argument("--log-level", choices=LOG_LEVELS, default=None)

    p = sub.add_parser("synth", help="generate a synthetic dataset on disk")
    common(p, needs_config=False)

    for verb, help_text in (
        ("compare-modalities", "single-modality baselines on a shared split"),
        ("compare-combinations", "stacked models over a modality ladder"),
        ("compare-fusion", "stacking versus the fusion baselines"),
        ("train", "train the stacked model and save it"),
    ):
        p = sub.add_parser(verb, help=help_text)
        common(p, needs_config=True)

    p = sub.add_parser("predict", help="write a prediction file from a saved model")
    p.add_argument("model_dir", type=Path, help="directory written by the train verb")
    p.add_argument("manifest", type=Path, help="dataset manifest to predict on")
    common(p, needs_config=False)

    p = sub.add_parser("score", help="score a prediction file against labels")
    p.add_argument("predictions", type=Path, help="JSON-lines prediction file")
    p.add_argument("manifest", type=Path, help="dataset manifest with the labels")
    common(p, needs_config=False)
    return parser


def _resolve_logging(args) -> None:
    level = args.log_level or os.environ.get(ENV_LOG_LEVEL, "info")
    if level.lower() not in LOG_LEVELS:
        raise ValidationError(f"unknown log level {level!r}")
    logging.basicConfig(
        level=getattr(logging, level.upper()),
        format="%(levelname)s %(name)s: %(message)s",
    )


def _resolve_config(args) -> RunConfig:
    if args.config is not None:
        cfg = load_config(args.config)
    else:
        cfg = parse_config({})
    if args.seed is not None:
        cfg.seed = int(args.seed)
    if args.threads is not None:
        if args.threads < 1:
            raise ValidationError(f"--threads must be >= 1, got {args.threads}")
        cfg.threads = int(args.threads)
    return cfg


def _resolve_out(args, cfg: RunConfig) -> Path:
    if args.out is not None:
        return Path(args.out)
    env = os.environ.get(ENV_OUT)
    if env:
        return Path(env)
    if cfg.out_dir is not None:
        return Path(cfg.out_dir)
    return Path("runs")


def dispatch(args) -> int:
    cfg = _resolve_config(args)
    out = _resolve_out(args, cfg)
    if args.command == "synth":
        harness.cmd_synth(cfg, cfg.seed, out)
    elif args.command == "train":
        harness.cmd_train(cfg, out, cfg.threads)
    elif args.command == "compare-modalities":
        harness.cmd_compare_modalities(cfg, out, cfg.threads)
    elif args.command == "compare-combinations":
        harness.cmd_compare_combinations(cfg, out, cfg.threads)
    elif args.command == "compare-fusion":
        harness.cmd_compare_fusion(cfg, out, cfg.threads)
    elif args.command == "predict":
        harness.cmd_predict(
            args.model_dir, args.manifest, out / "predictions.jsonl",
            cfg.metric, cfg.pool_mode,
        )
    elif args.command == "score":
        report = harness.cmd_score(args.predictions, args.manifest, cfg.metric, out)
        row = report.rows[0]
        print(f"accuracy {row.accuracy!r} gap {row.gap!r}")
    else:
        raise ValidationError(f"unknown command {args.command!r}")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        _resolve_logging(args)
        return dispatch(args)
    except StacktagError as exc:
        log.error("%s", exc)
        return exc.exit_code
    except OSError as exc:
        log.error("%s", exc)
        return 3


if __name__ == "__main__":
    sys.exit(main())
