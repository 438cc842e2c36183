"""This module provides the deterministic Euler sampler, the stochastic sampler with
exact Gaussian transition log-probabilities, and trajectory scoring."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from numpy.typing import ArrayLike, NDArray

from opgrpo.flow._schedule import NoiseSchedule
from opgrpo.flow._trajectory import Condition, Origin, Trajectory
from opgrpo.flow._velocity_field import VelocityField
from opgrpo.tensor import (
    Tensor,
    add,
    clamp,
    mul,
    reshape,
    square,
    stack,
    sub,
    tensor_sum,
)

LOGPROB_CLAMP = 1e6
_LOG_2PI = math.log(2.0 * math.pi)


class PrefixMismatchError(ValueError):
    """Error raised when an off-policy prefix does not cover the steps it is meant to
    supply for the requested truncation step."""


@dataclass
class ClampCounter:
    """Running counts of values that hit a numerical clamp.

    Attributes
    ----------
    logprob_events : int
        Step log-probabilities clipped to +/- LOGPROB_CLAMP.
    ratio_events : int
        Per-step log-ratios clipped before exponentiation.
    weight_events : int
        Correction weights clipped to their log bounds.
    """

    logprob_events: int = 0
    ratio_events: int = 0
    weight_events: int = 0

    def count_logprobs(self, values: NDArray[np.float64]) -> None:
        """Record how many entries exceed the log-probability clamp."""
        self.logprob_events += int(np.count_nonzero(np.abs(values) > LOGPROB_CLAMP))

    def merge(self, other: "ClampCounter") -> None:
        """Add another counter's events to this one."""
        self.logprob_events += other.logprob_events
        self.ratio_events += other.ratio_events
        self.weight_events += other.weight_events


def _clip_logprobs(
    values: NDArray[np.float64], counter: Optional[ClampCounter]
) -> NDArray[np.float64]:
    if counter is not None:
        counter.count_logprobs(values)
    return np.clip(values, -LOGPROB_CLAMP, LOGPROB_CLAMP)


def gaussian_step_logprob(
    z_next: "Tensor | ArrayLike", mean: "Tensor | ArrayLike", variance: float
) -> Tensor:
    """Log-density of an isotropic Gaussian, summed over the last axis.

    Computes -|z_next - mean|^2 / (2 var) - (D / 2) log var - (D / 2) log 2 pi, which
    is differentiable with respect to `mean`.

    Parameters
    ----------
    z_next : Tensor | ArrayLike
        Points of shape (..., D).
    mean : Tensor | ArrayLike
        Means of the same shape.
    variance : float
        Shared per-coordinate variance, must be positive.

    Returns
    -------
    Tensor
        One log-density per point.
    """
    if not variance > 0.0:
        raise ValueError(f"Variance must be positive. Received: {variance}")
    diff = sub(z_next, mean)
    dim = diff.shape[-1]
    quadratic = mul(tensor_sum(square(diff), axis=diff.ndim - 1), -0.5 / variance)
    return sub(quadratic, 0.5 * dim * (math.log(variance) + _LOG_2PI))


def _as_row(latent: ArrayLike) -> NDArray[np.float64]:
    return np.asarray(latent, dtype=np.float64).reshape(1, -1)


def euler_step(
    z: ArrayLike,
    step: int,
    vf: VelocityField,
    condition: Condition,
    schedule: NoiseSchedule,
) -> NDArray[np.float64]:
    """One deterministic Euler step z' = z + dt * v(z, t, c), dt = schedule.delta(t)."""
    row = _as_row(z)
    velocity = vf(row, step, condition.id).data
    return (row + schedule.delta(step) * velocity).reshape(np.shape(z))


def euler_sample(
    vf: VelocityField,
    condition_ids: Sequence[int],
    schedule: NoiseSchedule,
    initial: ArrayLike,
) -> NDArray[np.float64]:
    """Integrate a batch from t = T to t = 0 with deterministic Euler steps.

    Parameters
    ----------
    vf : VelocityField
        The field to integrate.
    condition_ids : Sequence[int]
        One condition id per row.
    schedule : NoiseSchedule
        Provides the step sizes.
    initial : ArrayLike
        Starting latents z_T of shape (N, D).

    Returns
    -------
    NDArray[np.float64]
        Final samples z_0 of shape (N, D).
    """
    latents = np.array(initial, dtype=np.float64)
    ids = np.asarray(condition_ids, dtype=np.int64)
    for step in range(schedule.num_steps, 0, -1):
        latents = latents + schedule.delta(step) * vf(latents, step, ids).data
    return latents


def sde_step(
    z: ArrayLike,
    step: int,
    vf: VelocityField,
    condition: Condition,
    schedule: NoiseSchedule,
    rng: Optional[np.random.Generator] = None,
    noise: Optional[ArrayLike] = None,
    counter: Optional[ClampCounter] = None,
) -> Tuple[NDArray[np.float64], float]:
    """Draw z_{t-1} ~ N(z + v * dsigma, var_t I) and return it with its exact
    log-density under that transition.

    Parameters
    ----------
    z : ArrayLike
        Current latent z_t of shape (D,).
    step : int
        Step index t in 1..T.
    vf : VelocityField
        Policy driving the mean.
    condition : Condition
        Condition of the trajectory.
    schedule : NoiseSchedule
        Provides the step variance and decrement.
    rng : Optional[np.random.Generator], optional
        Source of the standard normal draw, required unless `noise` is given.
    noise : Optional[ArrayLike], optional
        Pre-drawn standard normal vector of shape (D,), overriding `rng`.
    counter : Optional[ClampCounter], optional
        Receives log-probability clamp events.

    Returns
    -------
    Tuple[NDArray[np.float64], float]
        The next latent and its step log-probability.

    Raises
    ------
    NonPositiveVarianceError
        If the step variance is not positive.
    """
    variance = schedule.step_variance(step)
    row = _as_row(z)
    mean = row + schedule.delta(step) * vf(row, step, condition.id).data
    if noise is None:
        if rng is None:
            raise ValueError("Either `rng` or `noise` must be given.")
        noise = rng.standard_normal(row.shape[1])
    z_next = mean + math.sqrt(variance) * _as_row(noise)
    logprob = _clip_logprobs(gaussian_step_logprob(z_next, mean, variance).data, counter)
    return z_next.reshape(np.shape(z)), float(logprob[0])


def transition_logprob(
    z_next: ArrayLike,
    z: ArrayLike,
    step: int,
    vf: VelocityField,
    condition: Condition,
    schedule: NoiseSchedule,
) -> Tensor:
    """Log N(z_next; z + v(z, t, c) * dsigma, var_t I) as a scalar tensor.

    The result is differentiable with respect to the parameters of `vf` when it is
    evaluated inside a computation tape.

    Raises
    ------
    NonPositiveVarianceError
        If the step variance is not positive.
    """
    variance = schedule.step_variance(step)
    row = _as_row(z)
    mean = add(row, mul(vf(row, step, condition.id), schedule.delta(step)))
    return reshape(gaussian_step_logprob(_as_row(z_next), mean, variance), ())


def sde_continue(
    vf: VelocityField,
    condition_ids: Sequence[int],
    schedule: NoiseSchedule,
    start: ArrayLike,
    noise: ArrayLike,
    start_index: int = 0,
    counter: Optional[ClampCounter] = None,
) -> Tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Run the stochastic sampler on a batch from generation index `start_index` to the
    end of the schedule.

    Parameters
    ----------
    vf : VelocityField
        Policy driving the means.
    condition_ids : Sequence[int]
        One condition id per row.
    schedule : NoiseSchedule
        The step grid.
    start : ArrayLike
        Latents z_{T - start_index} of shape (N, D).
    noise : ArrayLike
        Standard normal draws of shape (N, T - start_index, D), one row per step.
    start_index : int, optional
        Generation index k0 to start at, by default 0 (i.e. from z_T).
    counter : Optional[ClampCounter], optional
        Receives log-probability clamp events.

    Returns
    -------
    Tuple[NDArray[np.float64], NDArray[np.float64]]
        Latents of shape (N, T - start_index + 1, D), starting with `start`, and step
        log-probabilities of shape (N, T - start_index).
    """
    start = np.asarray(start, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    ids = np.asarray(condition_ids, dtype=np.int64)
    remaining = schedule.num_steps - start_index
    if noise.shape != (start.shape[0], remaining, start.shape[1]):
        raise ValueError(
            f"Noise must have shape {(start.shape[0], remaining, start.shape[1])}. "
            f"Received: {noise.shape}"
        )
    latents = np.empty((start.shape[0], remaining + 1, start.shape[1]))
    step_logprobs = np.empty((start.shape[0], remaining))
    latents[:, 0] = start
    for offset in range(remaining):
        step = schedule.num_steps - start_index - offset
        variance = schedule.step_variance(step)
        current = latents[:, offset]
        mean = current + schedule.delta(step) * vf(current, step, ids).data
        latents[:, offset + 1] = mean + math.sqrt(variance) * noise[:, offset]
        step_logprobs[:, offset] = _clip_logprobs(
            gaussian_step_logprob(latents[:, offset + 1], mean, variance).data, counter
        )
    return latents, step_logprobs


def sample_batch(
    vf: VelocityField,
    condition_ids: Sequence[int],
    schedule: NoiseSchedule,
    noise: ArrayLike,
    counter: Optional[ClampCounter] = None,
) -> Tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Sample whole trajectories for a batch from pre-drawn noise.

    `noise[i, 0]` is the initial latent z_T of row i and `noise[i, k + 1]` drives the
    transition at generation index k.
    """
    noise = np.asarray(noise, dtype=np.float64)
    return sde_continue(
        vf, condition_ids, schedule, noise[:, 0], noise[:, 1:], counter=counter
    )


def _fresh_trajectory(
    vf: VelocityField,
    condition: Condition,
    schedule: NoiseSchedule,
    noise: NDArray[np.float64],
    birth_iteration: int,
    counter: Optional[ClampCounter],
) -> Trajectory:
    latents, step_logprobs = sample_batch(
        vf, [condition.id], schedule, noise[np.newaxis], counter=counter
    )
    return Trajectory(
        condition=condition,
        latents=latents[0],
        step_logprobs=step_logprobs[0],
        origin=Origin.ON_POLICY,
        birth_iteration=birth_iteration,
    )


def rollout_trajectory(
    vf: VelocityField,
    condition: Condition,
    schedule: NoiseSchedule,
    rng: np.random.Generator,
    truncation_step: Optional[int] = None,
    prefix: Optional[Trajectory] = None,
    birth_iteration: int = 0,
    counter: Optional[ClampCounter] = None,
) -> Trajectory:
    """Sample one trajectory, optionally continuing an off-policy prefix.

    Without a prefix, all T steps are sampled fresh. With a prefix and truncation step
    t_off, the latents z_T..z_{t_off} and the prefix step log-probabilities of steps
    T..t_off+1 are copied and the remaining steps are sampled from `vf`. The draws
    from `rng` are the same (T + 1, D) block in every case, so the regenerated steps
    use the same noise rows a fresh rollout from the same stream would.

    Parameters
    ----------
    vf : VelocityField
        Current policy.
    condition : Condition
        Condition to sample under.
    schedule : NoiseSchedule
        The step grid.
    rng : np.random.Generator
        Source of all draws.
    truncation_step : Optional[int], optional
        t_off in 0..T, required with a prefix. t_off = 0 returns the prefix
        unchanged; t_off = T ignores the prefix and returns an on-policy rollout.
    prefix : Optional[Trajectory], optional
        Off-policy trajectory supplying the early steps.
    birth_iteration : int, optional
        Iteration recorded on the new trajectory.
    counter : Optional[ClampCounter], optional
        Receives log-probability clamp events.

    Returns
    -------
    Trajectory
        Unrewarded trajectory (reward None) unless the prefix is returned unchanged.

    Raises
    ------
    PrefixMismatchError
        If the prefix is given without a valid truncation step, or its length or
        latent dimension is inconsistent with it.
    """
    num_steps = schedule.num_steps
    latent_dim = vf.architecture.latent_dim
    noise = rng.standard_normal((num_steps + 1, latent_dim))

    if prefix is None:
        return _fresh_trajectory(
            vf, condition, schedule, noise, birth_iteration, counter
        )

    if truncation_step is None or not 0 <= truncation_step <= num_steps:
        raise PrefixMismatchError(
            f"A prefix needs a truncation step in [0, {num_steps}]. "
            f"Received: {truncation_step}"
        )
    reused = num_steps - truncation_step
    if prefix.num_steps < reused or prefix.num_steps > num_steps:
        raise PrefixMismatchError(
            f"Prefix of {prefix.num_steps} steps cannot supply the {reused} steps "
            f"above t_off={truncation_step} of a {num_steps}-step schedule."
        )
    if prefix.latent_dim != latent_dim:
        raise PrefixMismatchError(
            f"Prefix latent dimension {prefix.latent_dim} does not match {latent_dim}."
        )
    if prefix.condition != condition:
        raise PrefixMismatchError(
            f"Prefix condition {prefix.condition.id} does not match {condition.id}."
        )

    if reused == 0:
        return _fresh_trajectory(
            vf, condition, schedule, noise, birth_iteration, counter
        )

    if truncation_step == 0:
        return Trajectory(
            condition=condition,
            latents=prefix.latents,
            step_logprobs=prefix.step_logprobs,
            reward=prefix.reward,
            origin=Origin.BUFFER,
            birth_iteration=prefix.birth_iteration,
            truncation_step=0,
        )

    start = prefix.latents[np.newaxis, reused]
    fresh_noise = noise[np.newaxis, reused + 1 :]
    head_latents = prefix.latents[:reused]
    head_logprobs = prefix.step_logprobs[:reused]
    tail_latents, tail_logprobs = sde_continue(
        vf,
        [condition.id],
        schedule,
        start,
        fresh_noise,
        start_index=reused,
        counter=counter,
    )
    return Trajectory(
        condition=condition,
        latents=np.concatenate([head_latents, tail_latents[0]]),
        step_logprobs=np.concatenate([head_logprobs, tail_logprobs[0]]),
        origin=Origin.BUFFER,
        birth_iteration=birth_iteration,
        truncation_step=truncation_step,
    )


@dataclass
class ScoredBatch:
    """Per-step log-probabilities of a batch of trajectories under one policy.

    Attributes
    ----------
    logprobs : Tensor
        Shape (N, T), clamped to +/- LOGPROB_CLAMP.
    means : List[Tensor]
        Transition means per generation index, each of shape (N, D).
    variances : List[float]
        Transition variance per generation index.
    """

    logprobs: Tensor
    means: List[Tensor] = field(default_factory=list)
    variances: List[float] = field(default_factory=list)


def score_latents(
    vf: VelocityField,
    latents: ArrayLike,
    condition_ids: Sequence[int],
    schedule: NoiseSchedule,
    counter: Optional[ClampCounter] = None,
) -> ScoredBatch:
    """Evaluate every transition of a batch of latent sequences under `vf`.

    Parameters
    ----------
    vf : VelocityField
        Scoring policy; differentiable inside a computation tape.
    latents : ArrayLike
        Latent sequences of shape (N, T + 1, D) in generation order.
    condition_ids : Sequence[int]
        One condition id per row.
    schedule : NoiseSchedule
        The step grid.
    counter : Optional[ClampCounter], optional
        Receives log-probability clamp events.

    Returns
    -------
    ScoredBatch
    """
    latents = np.asarray(latents, dtype=np.float64)
    if latents.ndim != 3 or latents.shape[1] != schedule.num_steps + 1:
        raise ValueError(
            f"Latents must have shape (N, {schedule.num_steps + 1}, D). "
            f"Received: {latents.shape}"
        )
    ids = np.asarray(condition_ids, dtype=np.int64)
    columns, means, variances = [], [], []
    for index in range(schedule.num_steps):
        step = schedule.num_steps - index
        variance = schedule.step_variance(step)
        current = latents[:, index]
        mean = add(current, mul(vf(current, step, ids), schedule.delta(step)))
        columns.append(gaussian_step_logprob(latents[:, index + 1], mean, variance))
        means.append(mean)
        variances.append(variance)
    logprobs = stack(columns, axis=1)
    if counter is not None:
        counter.count_logprobs(logprobs.data)
    return ScoredBatch(
        logprobs=clamp(logprobs, -LOGPROB_CLAMP, LOGPROB_CLAMP),
        means=means,
        variances=variances,
    )


def score_trajectory(
    trajectory: Trajectory,
    vf: VelocityField,
    schedule: NoiseSchedule,
    counter: Optional[ClampCounter] = None,
) -> Tensor:
    """Per-step log-probabilities of a trajectory under `vf`, shape (T,), in
    generation order.

    Raises
    ------
    PrefixMismatchError
        If the trajectory does not span the whole schedule.
    """
    if trajectory.num_steps != schedule.num_steps:
        raise PrefixMismatchError(
            f"Trajectory of {trajectory.num_steps} steps cannot be scored on a "
            f"{schedule.num_steps}-step schedule."
        )
    scored = score_latents(
        vf,
        trajectory.latents[np.newaxis],
        [trajectory.condition.id],
        schedule,
        counter=counter,
    )
    return reshape(scored.logprobs, (schedule.num_steps,))


def score_batch(
    trajectories: Sequence[Trajectory],
    vf: VelocityField,
    schedule: NoiseSchedule,
    counter: Optional[ClampCounter] = None,
) -> ScoredBatch:
    """Score a list of full-length trajectories together."""
    for trajectory in trajectories:
        if trajectory.num_steps != schedule.num_steps:
            raise PrefixMismatchError(
                f"Trajectory of {trajectory.num_steps} steps cannot be scored on a "
                f"{schedule.num_steps}-step schedule."
            )
    return score_latents(
        vf,
        np.stack([t.latents for t in trajectories]),
        [t.condition.id for t in trajectories],
        schedule,
        counter=counter,
    )


def step_logprob_profile(
    step_logprobs: ArrayLike,
) -> Tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Mean and standard deviation over trajectories of each step's log-probability,
    returned in step order t = T..1."""
    values = np.asarray(step_logprobs, dtype=np.float64)
    return values.mean(axis=0), values.std(axis=0)
