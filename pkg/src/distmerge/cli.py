"""Command line entry point: ``train``, ``suite`` and ``summarize``.

Exit codes: 0 success, 1 one or more runs failed, 2 invalid configuration or input.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from pydantic import ValidationError

from distmerge.config import ExperimentConfig, SuiteConfig, load_experiment, load_suite
from distmerge.harness import format_summary, run_experiment_suite, summarize_directory

EXIT_OK, EXIT_FAILED, EXIT_CONFIG = 0, 1, 2


def _overrides(args: argparse.Namespace) -> dict:
    out = {}
    if args.seed is not None:
        out["seed_base"] = args.seed
    if args.runs is not None:
        out["runs"] = args.runs
    return out


def _apply(config: ExperimentConfig, overrides: dict) -> ExperimentConfig:
    # re-validate so that e.g. --runs 0 is rejected like a bad config file
    return ExperimentConfig.model_validate({**config.model_dump(), **overrides})


def _describe(configs: list[ExperimentConfig]) -> str:
    lines = []
    for c in configs:
        lines.append(
            f"{c.label}: env={c.env} strategy={c.strategy} k={c.k} net={c.net} rounds={c.rounds} "
            f"steps_per_round={c.steps_per_round} runs={c.runs} seed_base={c.seed_base}"
        )
    return "\n".join(lines)


def _finish(configs, out_dir: Path, baseline, args) -> int:
    if args.dry_run:
        print(_describe(configs))
        print("dry run: configuration valid, nothing written")
        return EXIT_OK
    result = run_experiment_suite(configs, out_dir, baseline=baseline, jobs=args.jobs)
    if result.summaries:
        print(format_summary(result.summaries), end="")
    for failure in result.failed:
        print(f"FAILED {failure}", file=sys.stderr)
    print(f"outputs written to {out_dir}")
    return EXIT_OK if result.ok else EXIT_FAILED


def cmd_train(args: argparse.Namespace) -> int:
    config = _apply(load_experiment(args.config), _overrides(args))
    out_dir = Path(args.out_dir or Path("runs") / config.label)
    return _finish([config], out_dir, None, args)


def cmd_suite(args: argparse.Namespace) -> int:
    suite = load_suite(args.config)
    base = _apply(suite.base, _overrides(args))
    suite = SuiteConfig.model_validate({**suite.model_dump(), "base": base.model_dump()})
    out_dir = Path(args.out_dir or Path("runs") / suite.name)
    return _finish(suite.experiments(), out_dir, suite.baseline, args)


def cmd_summarize(args: argparse.Namespace) -> int:
    in_dir = Path(args.in_dir)
    if not in_dir.is_dir():
        raise ValueError(f"{in_dir} is not a directory")
    if args.dry_run:
        print(f"dry run: would summarize {in_dir}")
        return EXIT_OK
    summaries = summarize_directory(in_dir, args.baseline, args.env_threshold, args.end_threshold)
    print(format_summary(summaries), end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="distmerge", description="Distributed PPO gradient-merging experiments")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", required=True, help="YAML config file")
        p.add_argument("--seed", type=int, default=None, help="override seed_base")
        p.add_argument("--runs", type=int, default=None, help="override the number of runs")
        p.add_argument("--out-dir", default=None, help="output directory (default runs/<name>)")
        p.add_argument("--jobs", type=int, default=1, help="parallel runs")
        p.add_argument("--dry-run", action="store_true", help="validate the config and exit")

    train = sub.add_parser("train", help="run one experiment config")
    common(train)
    train.set_defaults(func=cmd_train)

    suite = sub.add_parser("suite", help="compare several strategies against a baseline")
    common(suite)
    suite.set_defaults(func=cmd_suite)

    summ = sub.add_parser("summarize", help="recompute summary tables from run CSVs")
    summ.add_argument("--in", dest="in_dir", required=True, help="suite output directory")
    summ.add_argument("--baseline", default="baseline_sum")
    summ.add_argument("--env-threshold", type=float, default=None)
    summ.add_argument("--end-threshold", type=float, default=None)
    summ.add_argument("--dry-run", action="store_true")
    summ.set_defaults(func=cmd_summarize)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if getattr(args, "jobs", 1) < 1:
        print("error: --jobs must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"invalid configuration:\n{exc}", file=sys.stderr)
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
    return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
