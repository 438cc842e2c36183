"""This module runs ablation matrices of training variants over several seeds and
compares them."""

from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from opgrpo.training import (
    TrainerConfig,
    TrainingDivergedError,
    TrainingMode,
    apply_overrides,
    train,
)
from opgrpo.utilities import OptionEnum, ThresholdHeuristic

logger = logging.getLogger(__name__)

DEFAULT_THRESHOLD_FRACTION = 0.95


class AblationPreset(OptionEnum):
    """An enum detailing the ablation matrices.

    Options are:
        wo_corr - sequence-corrected against uncorrected reuse\n
        wo_trun - default truncation against reusing whole buffer trajectories\n
        frac_sweep - off-policy fractions 0.05, 0.15 and 0.25\n
        baseline_vs_opgrpo - plain on-policy baseline against the corrected method
    """

    WO_CORR = "wo_corr"
    WO_TRUN = "wo_trun"
    FRAC_SWEEP = "frac_sweep"
    BASELINE_VS_OPGRPO = "baseline_vs_opgrpo"


_CORRECTED = {"mode": str(TrainingMode.SEQUENCE_CORRECTED)}

# The first variant of every preset is the reference the others are compared with.
PRESET_VARIANTS: Dict[AblationPreset, Tuple[Tuple[str, Mapping[str, Any]], ...]] = {
    AblationPreset.WO_CORR: (
        ("sequence_corrected", _CORRECTED),
        ("uncorrected", {"mode": str(TrainingMode.UNCORRECTED)}),
    ),
    AblationPreset.WO_TRUN: (
        ("truncated", _CORRECTED),
        ("no_truncation", {**_CORRECTED, "truncation_step": 0}),
    ),
    AblationPreset.FRAC_SWEEP: (
        ("fraction_0.15", {**_CORRECTED, "off_policy_fraction": 0.15}),
        ("fraction_0.05", {**_CORRECTED, "off_policy_fraction": 0.05}),
        ("fraction_0.25", {**_CORRECTED, "off_policy_fraction": 0.25}),
    ),
    AblationPreset.BASELINE_VS_OPGRPO: (
        ("on_policy_baseline", {"mode": str(TrainingMode.ON_POLICY_BASELINE)}),
        ("sequence_corrected", _CORRECTED),
    ),
}

TABLE_COLUMNS = (
    "variant",
    "seed",
    "iterations_to_threshold",
    "speedup",
    "final_reward",
    "clip_fraction_on_policy",
    "clip_fraction_off_policy",
    "weight_clamp_rate",
    "diverged",
    "collapsed",
)


@dataclass(frozen=True)
class AblationCell:
    """One (variant, seed) run of a matrix."""

    variant: str
    seed: int
    config: TrainerConfig
    output_dir: Path


@dataclass
class CellResult:
    """Per-iteration traces of a finished or aborted cell."""

    variant: str
    seed: int
    rewards: List[float]
    clip_on_policy: List[float]
    clip_off_policy: List[float]
    weight_clamp_events: int
    buffer_groups: int
    diverged: bool
    message: str = ""


def build_cells(
    preset: AblationPreset | str,
    base: TrainerConfig,
    seeds: Sequence[int],
    output_dir: str | Path,
) -> List[AblationCell]:
    """Expand a preset into its cells, each with its own output directory."""
    kind = AblationPreset.parse(preset)
    cells = []
    for variant, overrides in PRESET_VARIANTS[kind]:
        for seed in seeds:
            config = apply_overrides(base, {**overrides, "seed": int(seed)})
            cells.append(
                AblationCell(
                    variant,
                    int(seed),
                    config,
                    Path(output_dir) / f"{variant}-seed{seed}",
                )
            )
    return cells


def run_cell(cell: AblationCell) -> CellResult:
    """Train one cell. A diverging run is reported, not raised."""
    try:
        result = train(cell.config, cell.output_dir)
        metrics, diverged, message = result.metrics, False, ""
    except TrainingDivergedError as error:
        logger.warning("Cell %s seed %d diverged: %s", cell.variant, cell.seed, error)
        metrics, diverged, message = [], True, error.message
    return CellResult(
        variant=cell.variant,
        seed=cell.seed,
        rewards=[m.mean_reward for m in metrics],
        clip_on_policy=[m.clip_fraction_on_policy for m in metrics],
        clip_off_policy=[m.clip_fraction_off_policy for m in metrics],
        weight_clamp_events=sum(m.weight_clamp_events for m in metrics),
        buffer_groups=sum(m.buffer_groups for m in metrics),
        diverged=diverged,
        message=message,
    )


def run_cells(
    cells: Sequence[AblationCell], jobs: int = 1, progress: bool = False
) -> List[CellResult]:
    """Run cells, concurrently when jobs > 1, and return results in cell order."""
    results: Dict[int, CellResult] = {}
    with tqdm(
        total=len(cells), desc="Ablation", disable=not progress, dynamic_ncols=True
    ) as bar:
        if jobs <= 1:
            for index, cell in enumerate(cells):
                results[index] = run_cell(cell)
                bar.update()
        else:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                futures = {
                    pool.submit(run_cell, cell): index
                    for index, cell in enumerate(cells)
                }
                for future in as_completed(futures):
                    results[futures[future]] = future.result()
                    bar.update()
    return [results[index] for index in range(len(cells))]


def _heuristic(rewards: Sequence[float], window: int) -> ThresholdHeuristic:
    return ThresholdHeuristic(list(rewards), min(window, len(rewards)))


def _nanmean(values: Sequence[float]) -> float:
    finite = [v for v in values if not math.isnan(v)]
    return float(np.mean(finite)) if finite else math.nan


def comparison_table(
    results: Sequence[CellResult],
    threshold: Optional[float] = None,
    window: int = 10,
) -> List[Dict[str, Any]]:
    """One row per cell with iterations-to-threshold, speed-up against the reference
    variant of the same seed, final trailing reward and clip fractions.

    Without an explicit threshold each seed uses 95% of its reference variant's final
    trailing mean reward. A cell is flagged collapsed when its final trailing mean
    ends below its first one.
    """
    reference_variant = results[0].variant if results else ""
    references = {r.seed: r for r in results if r.variant == reference_variant}
    rows = []
    for result in results:
        reference = references.get(result.seed)
        level = threshold
        if level is None and reference is not None and reference.rewards:
            level = DEFAULT_THRESHOLD_FRACTION * _heuristic(
                reference.rewards, window
            ).final_trailing_mean()
        iterations = base_iterations = None
        final = collapsed = math.nan
        if result.rewards:
            heuristic = _heuristic(result.rewards, window)
            final = heuristic.final_trailing_mean()
            collapsed = bool(final < heuristic.trailing_means()[0])
            if level is not None:
                iterations = heuristic.iterations_to_threshold(level)
        if reference is not None and reference.rewards and level is not None:
            base_iterations = _heuristic(
                reference.rewards, window
            ).iterations_to_threshold(level)
        rows.append(
            {
                "variant": result.variant,
                "seed": result.seed,
                "iterations_to_threshold": iterations,
                "speedup": ThresholdHeuristic.speedup(iterations, base_iterations),
                "final_reward": final,
                "clip_fraction_on_policy": _nanmean(result.clip_on_policy),
                "clip_fraction_off_policy": _nanmean(result.clip_off_policy),
                "weight_clamp_rate": result.weight_clamp_events / result.buffer_groups
                if result.buffer_groups
                else math.nan,
                "diverged": result.diverged,
                "collapsed": collapsed,
            }
        )
    return rows


def _cell_text(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_table(path: str | Path, rows: Sequence[Mapping[str, Any]]) -> Path:
    """Write the comparison table as CSV in `TABLE_COLUMNS` order."""
    file_path = Path(path)
    file_path.parent.mkdir(parents=True, exist_ok=True)
    with file_path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(TABLE_COLUMNS)
        for row in rows:
            writer.writerow([_cell_text(row[column]) for column in TABLE_COLUMNS])
    return file_path
