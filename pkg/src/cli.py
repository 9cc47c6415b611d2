#!/usr/bin/env python3
# Copyright 2024 Canonical Ltd.
# See LICENSE file for licensing details.

"""Command-line entry point: data generation, single folds, benchmarks, sweeps and reports."""

import argparse
import logging
import os
import sys
import tempfile
from dataclasses import replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

from config import RunConfig, parse_config, parse_grid
from data import Domain, load_domains, synth_generate, write_atomic, write_dataset
from exceptions import ConfigurationError, DGForgeError, LoadError
from harness import aggregate, config_fingerprint, fit_fold, loso_folds, run_benchmark, sweep
from models import Model, save_checkpoint
from report import (
    RESULTS_FILE,
    SWEEP_FILE,
    load_results,
    render_csv,
    render_json,
    render_markdown,
    render_stored,
    render_sweep_csv,
    render_sweep_markdown,
    results_document,
    sweep_document,
)

logger = logging.getLogger(__name__)

LOG_ENV = "DG_FORGE_LOG"
LOG_LEVELS = {
    "error": logging.ERROR,
    "warn": logging.WARNING,
    "info": logging.INFO,
    "debug": logging.DEBUG,
}


def configure_logging() -> None:
    """Set the root log level from DG_FORGE_LOG, falling back to info."""
    name = os.environ.get(LOG_ENV, "info").strip().lower()
    logging.basicConfig(
        level=LOG_LEVELS.get(name, logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    if name not in LOG_LEVELS:
        logger.warning("Unknown %s value %r, using info", LOG_ENV, name)


def _timestamp() -> str:
    """Current UTC time in ISO 8601."""
    return datetime.now(timezone.utc).isoformat()


def load_run(args: argparse.Namespace) -> RunConfig:
    """Parse the run configuration and apply the --seed override.

    Args:
        args: parsed command line.

    Returns:
        The run configuration.
    """
    config = parse_config(args.config)
    if args.seed is None:
        return config
    if args.seed < 0:
        raise ConfigurationError("--seed must be nonnegative")
    return replace(
        config,
        seed=args.seed,
        train=replace(config.train, seed=args.seed),
        document={**config.document, "seed": args.seed},
    )


def load_data(config: RunConfig) -> List[Domain]:
    """Load the configured subjects.

    Args:
        config: run configuration.

    Returns:
        Feature-file subjects when a manifest is configured, synthetic ones otherwise.
    """
    if config.manifest is not None:
        return load_domains(config.manifest, config.target_shape)
    return synth_generate(config.synthetic)


def write_checkpoint(path: Path, model: Model) -> None:
    """Write a checkpoint through a temporary sibling and a rename.

    Args:
        path: destination.
        model: network.
    """
    path.parent.mkdir(parents=True, exist_ok=True)
    handle, temporary = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    os.close(handle)
    try:
        save_checkpoint(temporary, model)
        os.replace(temporary, path)
    except BaseException:
        Path(temporary).unlink(missing_ok=True)
        raise


def command_gen_synthetic(args: argparse.Namespace) -> None:
    """Write the synthetic subjects as feature files plus a manifest.

    Args:
        args: parsed command line.

    Raises:
        ConfigurationError: if the configuration points to a manifest.
    """
    config = load_run(args)
    if config.synthetic is None:
        raise ConfigurationError("gen-synthetic needs a synthetic data source", "$.data.manifest")
    manifest = write_dataset(synth_generate(config.synthetic), args.out)
    logger.info("Manifest written to %s", manifest)


def command_train(args: argparse.Namespace) -> None:
    """Run the fold targeting one subject and store its record and model.

    Args:
        args: parsed command line.

    Raises:
        ConfigurationError: if the subject is unknown.
    """
    config = load_run(args)
    if len(config.methods) > 1 or len(config.baselines) > 1:
        logger.warning("train runs a single cell; using the first method and baseline")
    folds = [f for f in loso_folds(load_data(config)) if f.target.subject == args.target_subject]
    if not folds:
        raise ConfigurationError(f"no subject {args.target_subject} in the data")
    result, model = fit_fold(folds[0], config.methods[0], config.train, config.baselines[0])
    out = Path(args.out)
    write_atomic(out / f"fold-{args.target_subject}.json", render_json(result.to_dict()))
    write_checkpoint(out / f"model-{args.target_subject}.dgfm", model)
    sys.stdout.write(
        f"subject {result.target_subject}: target accuracy {result.target_accuracy:.4f} "
        f"(best epoch {result.best_epoch}, validation {result.best_val_accuracy:.4f})\n"
    )


def command_benchmark(args: argparse.Namespace) -> None:
    """Run every LOSO fold of every configured cell and write the reports.

    Args:
        args: parsed command line.
    """
    config = load_run(args)
    domains = load_data(config)
    folds = run_benchmark(domains, config.baselines, config.methods, config.train, args.jobs)
    out = Path(args.out)
    failed = [f for f in folds if f.status != "ok"]
    if failed:
        write_atomic(
            out / "failed-folds.json", render_json({"folds": [f.to_dict() for f in failed]})
        )
    report = aggregate(folds, config_fingerprint(config.document))
    document = results_document(report, folds, config.document, _timestamp())
    markdown = render_markdown(report)
    write_atomic(out / RESULTS_FILE, render_json(document))
    write_atomic(out / "report.md", markdown)
    write_atomic(out / "report.csv", render_csv(folds))
    sys.stdout.write(markdown)


def command_sweep(args: argparse.Namespace) -> None:
    """Run the benchmark over an epochs × batch size grid.

    Args:
        args: parsed command line.
    """
    config = load_run(args)
    grid = parse_grid(args.grid)
    records = sweep(
        load_data(config), grid, config.baselines, config.methods, config.train, args.jobs
    )
    out = Path(args.out)
    write_atomic(out / SWEEP_FILE, render_json(sweep_document(records, grid, _timestamp())))
    write_atomic(out / "sweep.csv", render_sweep_csv(records))
    sys.stdout.write(render_sweep_markdown(records))


def command_report(args: argparse.Namespace) -> None:
    """Render stored results to stdout.

    Args:
        args: parsed command line.
    """
    kind, document = load_results(args.input)
    sys.stdout.write(render_stored(kind, document, args.format))


COMMANDS: Dict[str, Callable[[argparse.Namespace], None]] = {
    "gen-synthetic": command_gen_synthetic,
    "train": command_train,
    "benchmark": command_benchmark,
    "sweep": command_sweep,
    "report": command_report,
}


def build_parser() -> argparse.ArgumentParser:
    """Declare the command surface.

    Returns:
        The argument parser.
    """
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        "--seed", type=int, default=argparse.SUPPRESS, help="master seed override"
    )
    common.add_argument(
        "--jobs", type=int, default=argparse.SUPPRESS, help="folds run concurrently"
    )
    parser = argparse.ArgumentParser(prog="dg-forge", description=__doc__, parents=[common])
    commands = parser.add_subparsers(dest="command", required=True)

    def add(name: str, help_text: str) -> argparse.ArgumentParser:
        return commands.add_parser(name, help=help_text, parents=[common])

    generate = add("gen-synthetic", "write synthetic subjects as feature files")
    generate.add_argument("--config", required=True)
    generate.add_argument("--out", required=True)
    train = add("train", "run the fold targeting one subject")
    train.add_argument("--config", required=True)
    train.add_argument("--out", required=True)
    train.add_argument("--target-subject", type=int, required=True)
    benchmark = add("benchmark", "run the full leave-one-subject-out benchmark")
    benchmark.add_argument("--config", required=True)
    benchmark.add_argument("--out", required=True)
    grid = add("sweep", "run the benchmark over an epochs × batch size grid")
    grid.add_argument("--config", required=True)
    grid.add_argument("--grid", required=True)
    grid.add_argument("--out", required=True)
    report = add("report", "render stored results")
    report.add_argument("--in", dest="input", required=True)
    report.add_argument("--format", choices=("md", "csv", "json"), default="md")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Run one command.

    Args:
        argv: arguments, defaulting to the process arguments.

    Returns:
        0 on success, 1 on a configuration or input loading error, 2 on any other failure.
    """
    configure_logging()
    args = build_parser().parse_args(argv)
    args.seed = getattr(args, "seed", None)
    args.jobs = getattr(args, "jobs", 1)
    try:
        if args.jobs < 1:
            raise ConfigurationError("--jobs must be at least 1")
        COMMANDS[args.command](args)
    except (ConfigurationError, LoadError) as exc:
        logger.error("%s", exc)
        return 1
    except DGForgeError as exc:
        logger.error("%s failed: %s", args.command, exc)
        return 2
    return 0


if __name__ == "__main__":  # pragma: nocover
    sys.exit(main())
