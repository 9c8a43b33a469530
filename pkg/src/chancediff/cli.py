"""Command-line front end.

Subcommands mirror the pipeline stages::

    chancediff generate  --instance problem.txt --output runs/demo
    chancediff train     --output runs/demo --train-steps 6000
    chancediff sample    --instance problem.txt --output runs/demo --beta 30
    chancediff evaluate  --instance problem.txt --output runs/demo
    chancediff baseline  --instance problem.txt --output runs/demo
    chancediff pipeline  --instance problem.txt --output runs/demo

CHANCEDIFF_OUTPUT_ROOT sets the directory that relative --output paths are
resolved against. Exit codes: 2 configuration problems, 3 numerical
failures, 4 I/O failures.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from .errors import ChanceDiffError
from .pipeline import (ALL_STAGES, ExperimentConfig, baseline_reports, run_pipeline,
                       write_report_table)
from .problems import load_instance

EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_IO = 4


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--instance", help="instance definition file")
    parser.add_argument("--output", default="run", help="output directory for artifacts")
    parser.add_argument("--seed", type=int, default=0)


def _add_generate(parser):
    parser.add_argument("--grid-low", type=float, default=0.0)
    parser.add_argument("--grid-high", type=float, default=0.5)
    parser.add_argument("--grid-count", type=int, default=1000)
    parser.add_argument("--sample-count", type=int, default=100,
                        help="uncertainty draws behind the empirical mean and risk labels")


def _add_train(parser):
    parser.add_argument("--schedule-steps", type=int, default=1000)
    parser.add_argument("--train-steps", type=int, default=6000)
    parser.add_argument("--batch-size", type=int, default=64)
    parser.add_argument("--learning-rate", type=float, default=1e-3)
    parser.add_argument("--p-uncond", type=float, default=0.1)
    parser.add_argument("--width", type=int, default=256)
    parser.add_argument("--depth", type=int, default=4)
    parser.add_argument("--embed-dim", type=int, default=32)


def _add_sample(parser):
    parser.add_argument("--sampler-steps", type=int, default=100)
    parser.add_argument("--mode", choices=["deterministic", "ancestral"],
                        default="deterministic")
    parser.add_argument("--guidance", choices=["first", "second", "none"], default="first")
    parser.add_argument("--beta", type=float, default=30.0)
    parser.add_argument("--sigma2", type=float, default=0.1)
    parser.add_argument("--w", type=float, default=0.0)
    parser.add_argument("--rho", type=float, default=None,
                        help="conditioning risk level (default: the instance's)")
    parser.add_argument("--repeats", type=int, default=100)
    parser.add_argument("--record-trajectories", action="store_true")


def _add_evaluate(parser):
    parser.add_argument("--eval-draws", type=int, default=100_000)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="chancediff",
                                     description="chance-constrained optimization "
                                                 "by guided diffusion sampling")
    sub = parser.add_subparsers(dest="command", required=True)
    specs = {
        "generate": [_add_generate],
        "train": [_add_train],
        "sample": [_add_sample, _add_train],
        "evaluate": [_add_evaluate],
        "baseline": [_add_evaluate],
        "pipeline": [_add_generate, _add_train, _add_sample, _add_evaluate],
    }
    for name, extras in specs.items():
        p = sub.add_parser(name)
        _add_common(p)
        for add in extras:
            add(p)
    return parser


def _config_from_args(args, stages) -> ExperimentConfig:
    root = os.environ.get("CHANCEDIFF_OUTPUT_ROOT", ".")
    output = Path(args.output)
    if not output.is_absolute():
        output = Path(root) / output
    kwargs = dict(instance_path=args.instance, output_dir=str(output),
                  seed=args.seed, stages=stages)
    mapping = {
        "grid_low": "grid_low", "grid_high": "grid_high", "grid_count": "grid_count",
        "sample_count": "sample_count", "schedule_steps": "schedule_steps",
        "train_steps": "train_steps", "batch_size": "batch_size",
        "learning_rate": "learning_rate", "p_uncond": "p_uncond", "width": "width",
        "depth": "depth", "embed_dim": "embed_dim", "sampler_steps": "sampler_steps",
        "mode": "sampler_mode", "guidance": "guidance_order", "beta": "beta",
        "sigma2": "sigma2", "w": "w", "rho": "rho", "repeats": "repeats",
        "record_trajectories": "record_trajectories", "eval_draws": "eval_draws",
    }
    for arg_name, field in mapping.items():
        if hasattr(args, arg_name):
            kwargs[field] = getattr(args, arg_name)
    return ExperimentConfig(**kwargs)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    command = args.command
    stages = (command,) if command in ALL_STAGES else ALL_STAGES
    try:
        config = _config_from_args(args, stages)
        if command == "baseline":
            instance = load_instance(config.instance_path)
            reports = baseline_reports(instance, eval_draws=config.eval_draws,
                                       seed=config.seed)
            outdir = Path(config.output_dir)
            outdir.mkdir(parents=True, exist_ok=True)
            write_report_table(reports, outdir / "baseline_report.csv")
            for rep in reports:
                print(rep.csv_row())
        else:
            report = run_pipeline(config)
            if report is not None:
                print(report.csv_row())
    except (ValueError, TypeError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ChanceDiffError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"i/o failure: {exc}", file=sys.stderr)
        return EXIT_IO
    return 0


if __name__ == "__main__":
    sys.exit(main())
