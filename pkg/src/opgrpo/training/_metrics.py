"""This module defines the per-iteration metrics record and its CSV log."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Sequence, Tuple

import numpy as np
from numpy.typing import NDArray

from opgrpo.flow import ClampCounter, Origin, step_logprob_profile
from opgrpo.objective import ClipStats, EmptySelectionError, StepFilter, clip_fraction
from opgrpo.rollout import GroupBatch

BASE_COLUMNS: Tuple[str, ...] = (
    "iteration",
    "mean_reward",
    "max_reward",
    "loss",
    "degenerate_groups",
    "buffer_groups",
    "clip_fraction",
    "clip_fraction_on_policy",
    "clip_fraction_off_policy",
    "log_weight_min",
    "log_weight_mean",
    "log_weight_max",
    "weight_clamp_events",
    "ratio_clamp_events",
    "logprob_clamp_events",
    "buffer_size",
    "buffer_mean_retention",
)


def metric_columns(num_steps: int) -> Tuple[str, ...]:
    """Column order of the metrics CSV for a T-step schedule; the per-step profile
    columns run from step T down to step 1."""
    profile = tuple(f"abs_logprob_step_{t}" for t in range(num_steps, 0, -1))
    return BASE_COLUMNS + profile


def _format(value: float | int) -> str:
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def _safe_fraction(stats: ClipStats, step_filter: StepFilter) -> float:
    try:
        return clip_fraction(stats, step_filter)
    except EmptySelectionError:
        return math.nan


@dataclass
class IterationMetrics:
    """Diagnostics of one training iteration.

    Values that are undefined for an iteration, such as the off-policy clip fraction
    when no group reused a buffer trajectory, are NaN. `wall_time` is kept out of the
    CSV.
    """

    iteration: int
    mean_reward: float
    max_reward: float
    loss: float
    degenerate_groups: int
    buffer_groups: int
    clip_fraction: float
    clip_fraction_on_policy: float
    clip_fraction_off_policy: float
    log_weight_min: float
    log_weight_mean: float
    log_weight_max: float
    weight_clamp_events: int
    ratio_clamp_events: int
    logprob_clamp_events: int
    buffer_size: int
    buffer_mean_retention: float
    abs_logprob_profile: NDArray[np.float64] = field(default_factory=lambda: np.zeros(0))
    wall_time: float = 0.0

    @classmethod
    def collect(
        cls,
        iteration: int,
        groups: Sequence[GroupBatch],
        loss: float,
        stats: ClipStats,
        counter: ClampCounter,
        buffer_size: int,
        buffer_mean_retention: float,
        wall_time: float = 0.0,
    ) -> "IterationMetrics":
        """Summarise an iteration's groups and first-epoch surrogate evaluation."""
        rewards = np.concatenate([group.rewards for group in groups])
        buffer_weights = np.array(
            [
                log_weight
                for group in groups
                for member, log_weight in zip(group.members, group.log_weights)
                if member.origin is Origin.BUFFER
            ]
        )
        if buffer_weights.size:
            weight_summary = (
                float(buffer_weights.min()),
                float(buffer_weights.mean()),
                float(buffer_weights.max()),
            )
        else:
            weight_summary = (math.nan, math.nan, math.nan)
        on_policy_steps = np.stack(
            [
                member.step_logprobs
                for group in groups
                for member in group.members
                if member.origin is Origin.ON_POLICY
            ]
        )
        profile, _ = step_logprob_profile(np.abs(on_policy_steps))
        return cls(
            iteration=iteration,
            mean_reward=float(rewards.mean()),
            max_reward=float(rewards.max()),
            loss=float(loss),
            degenerate_groups=sum(group.degenerate for group in groups),
            buffer_groups=sum(group.contains_buffer_member for group in groups),
            clip_fraction=_safe_fraction(stats, StepFilter.ALL),
            clip_fraction_on_policy=_safe_fraction(stats, StepFilter.ON_POLICY),
            clip_fraction_off_policy=_safe_fraction(stats, StepFilter.OFF_POLICY),
            log_weight_min=weight_summary[0],
            log_weight_mean=weight_summary[1],
            log_weight_max=weight_summary[2],
            weight_clamp_events=counter.weight_events,
            ratio_clamp_events=counter.ratio_events,
            logprob_clamp_events=counter.logprob_events,
            buffer_size=buffer_size,
            buffer_mean_retention=float(buffer_mean_retention),
            abs_logprob_profile=profile,
            wall_time=wall_time,
        )

    def as_row(self) -> List[str]:
        """Values in `metric_columns` order, floats written with repr."""
        values = [_format(getattr(self, name)) for name in BASE_COLUMNS]
        values.extend(_format(value) for value in self.abs_logprob_profile)
        return values

    def as_dict(self) -> Dict[str, float]:
        """Column name to value, excluding wall time."""
        columns = metric_columns(len(self.abs_logprob_profile))
        return {
            name: float(value) for name, value in zip(columns, self.as_row())
        }


class MetricsLog:
    """Append-only CSV of iteration metrics.

    Parameters
    ----------
    path : Path
        File to write.
    num_steps : int
        T, which fixes the number of profile columns.
    resume_after : Optional[int]
        When given, an existing file is kept up to and including this iteration and
        later rows are dropped, so a resumed run continues the log. Otherwise the
        file is started afresh.
    """

    def __init__(
        self, path: str | Path, num_steps: int, resume_after: int | None = None
    ) -> None:
        self.path = Path(path)
        self.columns = metric_columns(num_steps)
        kept: List[List[str]] = []
        if resume_after is not None and self.path.is_file():
            header, rows = read_metrics(self.path)
            if tuple(header) != self.columns:
                raise ValueError(
                    f"Existing metrics log {self.path} has a different column layout."
                )
            kept = [row for row in rows if int(row[0]) <= resume_after]
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with self.path.open("w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(self.columns)
            writer.writerows(kept)
        self.rows = len(kept)

    def append(self, metrics: IterationMetrics) -> None:
        """Write one row and flush it to disk."""
        row = metrics.as_row()
        if len(row) != len(self.columns):
            raise ValueError(
                f"Metrics row has {len(row)} values, the log has "
                f"{len(self.columns)} columns."
            )
        with self.path.open("a", newline="", encoding="utf-8") as handle:
            csv.writer(handle, lineterminator="\n").writerow(row)
        self.rows += 1


def read_metrics(path: str | Path) -> Tuple[List[str], List[List[str]]]:
    """Header and rows of a metrics CSV, as strings.

    Raises
    ------
    ValueError
        If the file is empty.
    """
    with Path(path).open(newline="", encoding="utf-8") as handle:
        content = list(csv.reader(handle))
    if not content:
        raise ValueError(f"Metrics file {path} is empty.")
    return content[0], content[1:]
