"""This module defines conditions and the trajectories sampled under them."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
from numpy.typing import ArrayLike, NDArray

from opgrpo.utilities import OptionEnum


@dataclass(frozen=True)
class Condition:
    """A task condition: a stable integer id and its fixed embedding vector."""

    id: int
    embedding: Tuple[float, ...]

    def __post_init__(self) -> None:
        if isinstance(self.id, bool) or int(self.id) != self.id or self.id < 0:
            raise ValueError(
                f"Condition id must be a non-negative integer. Received: {self.id}"
            )
        object.__setattr__(self, "id", int(self.id))
        object.__setattr__(self, "embedding", tuple(float(e) for e in self.embedding))

    @classmethod
    def one_hot(cls, condition_id: int, num_conditions: int) -> "Condition":
        """Condition whose embedding is the one-hot vector of its id."""
        if not 0 <= condition_id < num_conditions:
            raise ValueError(
                f"Condition id must lie in [0, {num_conditions - 1}]. "
                f"Received: {condition_id}"
            )
        embedding = [0.0] * num_conditions
        embedding[condition_id] = 1.0
        return cls(condition_id, tuple(embedding))

    def as_array(self) -> NDArray[np.float64]:
        """The embedding as a float array."""
        return np.array(self.embedding, dtype=np.float64)


def task_conditions(num_conditions: int) -> List[Condition]:
    """The full task set of one-hot conditions 0..num_conditions-1."""
    return [Condition.one_hot(i, num_conditions) for i in range(num_conditions)]


class Origin(OptionEnum):
    """Where a trajectory entered a group from.

    Options are:
        on_policy - sampled by the current iteration's frozen policy\n
        buffer - taken, possibly truncated and regenerated, from the replay buffer
    """

    ON_POLICY = "on_policy"
    BUFFER = "buffer"


def _frozen_array(values: ArrayLike) -> NDArray[np.float64]:
    array = np.array(values, dtype=np.float64)
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class Trajectory:
    """A sampled latent sequence with its per-step log-probabilities.

    Arrays are stored in generation order: `latents[k]` is z_{T-k}, so `latents[0]` is
    the initial noise and `latents[-1]` the sample z_0, and `step_logprobs[k]` is
    log p(z_{T-k-1} | z_{T-k}, c) under the policy that generated that step.

    Parameters
    ----------
    condition : Condition
        Condition the trajectory was sampled under.
    latents : ArrayLike
        Array of shape (L + 1, D).
    step_logprobs : ArrayLike
        Array of shape (L,), all finite.
    reward : Optional[float], optional
        Reward of the final sample, None until scored.
    origin : Origin, optional
        By default on_policy.
    birth_iteration : int, optional
        Training iteration the trajectory was sampled in, by default 0.
    truncation_step : Optional[int], optional
        For buffer-origin members, the step t_off separating the reused early steps
        (t > t_off) from regenerated late steps. None means the whole buffer
        trajectory is reused unchanged.

    Raises
    ------
    ValueError
        If shapes disagree, a log-probability or the reward is non-finite, or the
        truncation step is out of range.
    """

    condition: Condition
    latents: NDArray[np.float64]
    step_logprobs: NDArray[np.float64]
    reward: Optional[float] = None
    origin: Origin = Origin.ON_POLICY
    birth_iteration: int = 0
    truncation_step: Optional[int] = None

    def __post_init__(self) -> None:
        latents = _frozen_array(self.latents)
        step_logprobs = _frozen_array(self.step_logprobs)
        if latents.ndim != 2 or step_logprobs.ndim != 1:
            raise ValueError(
                "Latents must be 2-D and step_logprobs 1-D. "
                f"Received shapes: {latents.shape}, {step_logprobs.shape}"
            )
        if latents.shape[0] != step_logprobs.shape[0] + 1:
            raise ValueError(
                "A trajectory of L steps needs L + 1 latents. "
                f"Received: {latents.shape[0]} latents, {step_logprobs.shape[0]} steps"
            )
        if not np.all(np.isfinite(step_logprobs)) or not np.all(np.isfinite(latents)):
            raise ValueError("Trajectory latents and step log-probs must be finite.")
        if self.reward is not None and not math.isfinite(self.reward):
            raise ValueError(f"Reward must be finite. Received: {self.reward}")
        if self.truncation_step is not None and not (
            0 <= self.truncation_step <= step_logprobs.shape[0]
        ):
            raise ValueError(
                f"truncation_step must lie in [0, {step_logprobs.shape[0]}]. "
                f"Received: {self.truncation_step}"
            )
        object.__setattr__(self, "latents", latents)
        object.__setattr__(self, "step_logprobs", step_logprobs)
        object.__setattr__(self, "origin", Origin.parse(self.origin))
        if self.reward is not None:
            object.__setattr__(self, "reward", float(self.reward))

    @property
    def num_steps(self) -> int:
        """Number of transition steps."""
        return int(self.step_logprobs.shape[0])

    @property
    def latent_dim(self) -> int:
        """Dimension of each latent."""
        return int(self.latents.shape[1])

    @property
    def sample(self) -> NDArray[np.float64]:
        """The final latent z_0."""
        return self.latents[-1]

    @property
    def total_logprob(self) -> float:
        """Sum of the per-step log-probabilities."""
        return float(np.sum(self.step_logprobs))

    @property
    def off_policy_mask(self) -> NDArray[np.bool_]:
        """Boolean per step (generation order), True where the step was generated by an
        earlier policy and still carries that policy's log-probability."""
        mask = np.zeros(self.num_steps, dtype=bool)
        if self.origin is Origin.BUFFER:
            reused = (
                self.num_steps
                if self.truncation_step is None
                else self.num_steps - self.truncation_step
            )
            mask[:reused] = True
        return mask

    @property
    def off_policy_steps(self) -> int:
        """Number of off-policy steps."""
        return int(self.off_policy_mask.sum())

    @property
    def generated_steps(self) -> int:
        """Number of steps sampled by the policy this trajectory was built under. Zero
        for a buffer trajectory reused unchanged."""
        return self.num_steps - self.off_policy_steps

    def with_reward(self, reward: float) -> "Trajectory":
        """Copy carrying the given reward."""
        return dataclasses.replace(self, reward=float(reward))

    def to_dict(self) -> dict:
        """JSON-serialisable form, used for buffer dumps and divergence reports."""
        return {
            "condition_id": self.condition.id,
            "origin": str(self.origin),
            "reward": self.reward,
            "birth_iteration": int(self.birth_iteration),
            "truncation_step": self.truncation_step,
            "total_logprob": self.total_logprob,
            "step_logprobs": self.step_logprobs.tolist(),
            "latents": self.latents.tolist(),
        }
