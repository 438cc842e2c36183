"""This module implements the `opgrpo` command line."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence

from opgrpo.cli._ablation import (
    AblationPreset,
    build_cells,
    comparison_table,
    run_cells,
    write_table,
)
from opgrpo.cli._manifest import (
    RunManifest,
    resolve_output_root,
    run_id,
    write_config,
)
from opgrpo.cli._plot_data import (
    long_format,
    run_label,
    write_long_format,
)
from opgrpo.cli._profile import logprob_profile
from opgrpo.training import (
    ConfigError,
    TrainerConfig,
    TrainingDivergedError,
    TrainingMode,
    apply_overrides,
    load_checkpoint,
    load_config,
    parse_override_value,
    train,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_DIVERGED = 1
EXIT_CONFIG = 2

# Flag destination to config field.
_FLAG_FIELDS = {
    "iterations": "total_iterations",
    "mode": "mode",
    "seed": "seed",
    "off_policy_fraction": "off_policy_fraction",
    "truncation_step": "truncation_step",
    "group_size": "group_size",
    "groups_per_iteration": "groups_per_iteration",
    "checkpoint_every": "checkpoint_every",
}


class UsageError(ValueError):
    """Error raised for invalid command-line input that argparse cannot catch."""


def _parse_set(values: Optional[Sequence[str]]) -> Dict[str, Any]:
    overrides: Dict[str, Any] = {}
    for item in values or []:
        key, separator, raw = item.partition("=")
        if not separator or not key:
            raise ConfigError(item, "overrides must look like section.key=value.")
        overrides[key.strip()] = parse_override_value(raw.strip())
    return overrides


def resolve_config(args: argparse.Namespace) -> TrainerConfig:
    """Config file values, then `--set` overrides, then dedicated flags."""
    config = load_config(args.config)
    overrides = _parse_set(args.set)
    for flag, field_name in _FLAG_FIELDS.items():
        value = getattr(args, flag, None)
        if value is not None:
            overrides[field_name] = value
    return apply_overrides(config, overrides) if overrides else config


def _add_config_arguments(parser: argparse.ArgumentParser, modes: bool = True) -> None:
    parser.add_argument("--config", type=Path, help="TOML config file.")
    parser.add_argument(
        "--set",
        action="append",
        metavar="KEY=VALUE",
        help="Override a config value, e.g. schedule.num_steps=4. Repeatable.",
    )
    parser.add_argument("--iterations", type=int, help="Total training iterations.")
    if modes:
        parser.add_argument("--mode", choices=TrainingMode.members())
        parser.add_argument("--seed", type=int)
        parser.add_argument("--off-policy-fraction", type=float)
        parser.add_argument("--truncation-step", type=int)
    parser.add_argument("--group-size", type=int)
    parser.add_argument("--groups-per-iteration", type=int)
    parser.add_argument("--checkpoint-every", type=int)


def _run_directory(args: argparse.Namespace, config: TrainerConfig) -> Path:
    """A resumed run continues in the directory its checkpoint was written to."""
    if args.resume is not None:
        checkpoints = Path(args.resume).resolve().parent
        if checkpoints.name == "checkpoints":
            return checkpoints.parent
    return resolve_output_root(args.output_root) / run_id(config)


def cmd_train(args: argparse.Namespace) -> int:
    """Train one run into `<output root>/<run id>`, or continue a resumed one."""
    config = resolve_config(args)
    directory = _run_directory(args, config)
    manifest = RunManifest.start(config)
    write_config(directory, config)
    manifest.write(directory)
    logger.info("Training run %s in %s.", manifest.run_id, directory)
    try:
        result = train(
            config, directory, resume_from=args.resume, progress=args.progress
        )
    except TrainingDivergedError:
        manifest.finish("diverged")
        manifest.outputs = {"summary": str(directory / "summary.json")}
        manifest.write(directory)
        raise
    except Exception:
        manifest.finish("failed")
        manifest.write(directory)
        raise
    manifest.finish("completed")
    manifest.outputs = {
        "metrics": str(directory / "metrics.csv"),
        "summary": str(directory / "summary.json"),
        "final_checkpoint": str(result.final_checkpoint),
        "config": str(directory / "config.json"),
    }
    manifest.write(directory)
    print(directory)
    return EXIT_OK


def cmd_ablation(args: argparse.Namespace) -> int:
    """Run a preset over seeds and write `comparison.csv`."""
    base = resolve_config(args)
    preset = AblationPreset.parse(args.preset)
    directory = resolve_output_root(args.output_root) / "ablation" / str(preset)
    cells = build_cells(preset, base, args.seeds, directory)
    logger.info("Running %d ablation cells in %s.", len(cells), directory)
    results = run_cells(cells, jobs=args.jobs, progress=args.progress)
    rows = comparison_table(results, threshold=args.threshold)
    table = write_table(directory / "comparison.csv", rows)
    with table.open(encoding="utf-8") as handle:
        sys.stdout.write(handle.read())
    return EXIT_OK


def cmd_logprob_profile(args: argparse.Namespace) -> int:
    """Write the per-step log-probability profile of a checkpoint."""
    state = load_checkpoint(args.checkpoint)
    reference = (
        None
        if args.reference_checkpoint is None
        else load_checkpoint(args.reference_checkpoint)
    )
    profile = logprob_profile(
        state,
        num_trajectories=args.num_trajectories,
        seed=args.seed,
        reference=reference,
    )
    path = profile.write(args.output)
    print(path)
    return EXIT_OK


def cmd_plot_data(args: argparse.Namespace) -> int:
    """Merge metrics logs into long format."""
    if not args.metrics_csv:
        raise UsageError("plot-data needs at least one metrics file.")
    labels = [run_label(path) for path in args.metrics_csv]
    inputs = []
    for index, (label, path) in enumerate(zip(labels, args.metrics_csv)):
        unique = label if labels.count(label) == 1 else f"{label}-{index}"
        inputs.append((unique, path))
    rows = long_format(inputs, metrics=args.metric)
    path = write_long_format(args.output, rows)
    print(path)
    return EXIT_OK


def cmd_inspect_buffer(args: argparse.Namespace) -> int:
    """Dump the buffer entries of a checkpoint as JSON."""
    state = load_checkpoint(args.checkpoint)
    payload = {
        "iteration": state.iteration,
        "capacity": state.buffer.capacity,
        "decay_rate": state.buffer.decay_rate,
        "entries": [entry.to_dict() for entry in state.buffer.entries],
    }
    text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    if args.output is None:
        sys.stdout.write(text)
    else:
        Path(args.output).write_text(text, encoding="utf-8")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    """The `opgrpo` argument parser."""
    parser = argparse.ArgumentParser(
        prog="opgrpo",
        description="Off-policy group-relative policy optimisation for toy "
        "flow-matching models.",
    )
    parser.add_argument(
        "--log-level",
        default="INFO",
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
    )
    parser.add_argument(
        "--output-root",
        type=Path,
        help="Root of run directories; defaults to $OPGRPO_OUTPUT_ROOT or ./runs.",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    train_parser = commands.add_parser("train", help="Train one run.")
    _add_config_arguments(train_parser)
    train_parser.add_argument("--resume", type=Path, help="Checkpoint to resume from.")
    train_parser.add_argument("--progress", action="store_true")
    train_parser.set_defaults(handler=cmd_train)

    ablation = commands.add_parser("ablation", help="Run an ablation preset.")
    ablation.add_argument("preset", choices=AblationPreset.members())
    _add_config_arguments(ablation, modes=False)
    ablation.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ablation.add_argument("--jobs", type=int, default=1)
    ablation.add_argument(
        "--threshold",
        type=float,
        help="Reward threshold; defaults to 95%% of the reference variant's final "
        "trailing mean.",
    )
    ablation.add_argument("--progress", action="store_true")
    ablation.set_defaults(handler=cmd_ablation)

    profile = commands.add_parser(
        "logprob-profile", help="Per-step log-probability profile of a checkpoint."
    )
    profile.add_argument("checkpoint", type=Path)
    profile.add_argument("--reference-checkpoint", type=Path)
    profile.add_argument("--num-trajectories", type=int, default=256)
    profile.add_argument("--seed", type=int, default=0)
    profile.add_argument("--output", type=Path, default=Path("logprob_profile.csv"))
    profile.set_defaults(handler=cmd_logprob_profile)

    plot = commands.add_parser("plot-data", help="Merge metrics logs for plotting.")
    plot.add_argument("metrics_csv", type=Path, nargs="*")
    plot.add_argument("--metric", action="append", help="Metric to keep. Repeatable.")
    plot.add_argument("--output", type=Path, default=Path("plot_data.csv"))
    plot.set_defaults(handler=cmd_plot_data)

    inspect = commands.add_parser("inspect-buffer", help="Dump checkpoint buffer.")
    inspect.add_argument("checkpoint", type=Path)
    inspect.add_argument("--output", type=Path)
    inspect.set_defaults(handler=cmd_inspect_buffer)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Run the command line and return its exit code: 0 on success, 1 when training
    diverged, 2 for invalid configuration or input."""
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, args.log_level),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    handler: Callable[[argparse.Namespace], int] = args.handler
    try:
        return handler(args)
    except TrainingDivergedError as error:
        print(f"error: {error}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ValueError, FileNotFoundError) as error:
        print(f"error: {error}", file=sys.stderr)
        return EXIT_CONFIG
