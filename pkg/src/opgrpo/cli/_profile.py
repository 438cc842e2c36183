"""This module measures per-step log-probabilities of on-policy samples and of
replayed off-policy samples under the same policy."""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional

import numpy as np
from numpy.typing import NDArray

from opgrpo.flow import sample_batch, score_latents, step_logprob_profile
from opgrpo.training import TrainerState

PROFILE_COLUMNS = ("step", "on_mean", "on_std", "off_mean", "off_std")


class EmptyBufferWarning(UserWarning):
    """Warning raised when a checkpoint has no buffered trajectories to replay."""


@dataclass
class LogprobProfile:
    """Mean and std of each step's log-probability for both populations, in
    generation order t = T..1. Off-policy columns are NaN when there was nothing to
    replay."""

    steps: NDArray[np.int64]
    on_mean: NDArray[np.float64]
    on_std: NDArray[np.float64]
    off_mean: NDArray[np.float64]
    off_std: NDArray[np.float64]

    def rows(self) -> List[List[str]]:
        """CSV rows in `PROFILE_COLUMNS` order."""
        return [
            [str(int(step))] + [repr(float(v)) for v in values]
            for step, *values in zip(
                self.steps, self.on_mean, self.on_std, self.off_mean, self.off_std
            )
        ]

    def write(self, path: str | Path) -> Path:
        """Write the profile as CSV."""
        file_path = Path(path)
        file_path.parent.mkdir(parents=True, exist_ok=True)
        with file_path.open("w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(PROFILE_COLUMNS)
            writer.writerows(self.rows())
        return file_path


def _noise(
    rng: np.random.Generator, count: int, num_steps: int, dim: int
) -> NDArray[np.float64]:
    return rng.standard_normal((count, num_steps + 1, dim))


def logprob_profile(
    state: TrainerState,
    num_trajectories: int = 256,
    seed: int = 0,
    reference: Optional[TrainerState] = None,
) -> LogprobProfile:
    """Profile the step log-probabilities of a checkpointed policy.

    The on-policy population is `num_trajectories` fresh samples of the policy with
    their own log-probabilities. The off-policy population is scored under the same
    policy but was generated elsewhere: by the reference checkpoint when given
    (`num_trajectories` samples), otherwise the checkpoint's buffered trajectories.

    Raises
    ------
    ValueError
        If num_trajectories is not positive or the reference has another schedule.

    Warns
    -----
    EmptyBufferWarning
        If there is no reference and the buffer is empty; off-policy columns are NaN.
    """
    if num_trajectories < 1:
        raise ValueError(
            f"num_trajectories must be positive. Received: {num_trajectories}"
        )
    config = state.config
    schedule = config.schedule
    steps = np.arange(schedule.num_steps, 0, -1)
    num_conditions = config.architecture.num_conditions
    on_rng, off_rng = (
        np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(2)
    )
    ids = np.arange(num_trajectories) % num_conditions
    _, on_logprobs = sample_batch(
        state.policy,
        ids,
        schedule,
        _noise(on_rng, num_trajectories, schedule.num_steps, config.reward.dim),
    )
    on_mean, on_std = step_logprob_profile(on_logprobs)

    latents: Optional[NDArray[np.float64]] = None
    off_ids: NDArray[np.int64] = np.zeros(0, dtype=np.int64)
    if reference is not None:
        if reference.config.schedule != schedule:
            raise ValueError("The reference checkpoint uses a different schedule.")
        latents, _ = sample_batch(
            reference.policy,
            ids,
            schedule,
            _noise(off_rng, num_trajectories, schedule.num_steps, config.reward.dim),
        )
        off_ids = ids
    elif len(state.buffer):
        entries = state.buffer.entries
        latents = np.stack([entry.trajectory.latents for entry in entries])
        off_ids = np.array([entry.condition_id for entry in entries], dtype=np.int64)
    else:
        warnings.warn(
            "The checkpoint's replay buffer is empty; only the on-policy profile is "
            "reported.",
            EmptyBufferWarning,
        )

    if latents is None:
        off_mean = np.full(schedule.num_steps, math.nan)
        off_std = np.full(schedule.num_steps, math.nan)
    else:
        scored = score_latents(state.policy, latents, off_ids, schedule)
        off_mean, off_std = step_logprob_profile(scored.logprobs.data)
    return LogprobProfile(steps, on_mean, on_std, off_mean, off_std)
