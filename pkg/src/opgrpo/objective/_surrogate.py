"""This module provides the clipped group-relative surrogate loss in its corrected,
naive and uncorrected forms."""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, List, Optional, Sequence, Tuple

import numpy as np
from numpy.typing import NDArray

from opgrpo.flow import (
    ClampCounter,
    NoiseSchedule,
    ScoredBatch,
    Trajectory,
    VelocityField,
    score_batch,
    score_trajectory,
)
from opgrpo.objective._clip_stats import ClipStats
from opgrpo.tensor import (
    Tensor,
    add,
    clamp,
    exp,
    minimum,
    mul,
    neg,
    square,
    stack,
    sub,
    tensor_mean,
    tensor_sum,
)
from opgrpo.utilities import OptionEnum

if TYPE_CHECKING:
    from opgrpo.rollout import GroupBatch

RATIO_LOG_CLAMP = 50.0


class ObjectiveMode(OptionEnum):
    """An enum detailing how reused buffer steps enter the surrogate.

    Options are:
        sequence_corrected - per-step ratios against the rollout policy, each buffer
            member weighted by its sequence-level correction weight\n
        naive_substitution - the buffer policy replaces the rollout policy in the
            per-step ratio denominator of reused steps, no outer weight\n
        uncorrected - per-step ratios against the rollout policy, weights forced to 1
    """

    SEQUENCE_CORRECTED = "sequence_corrected"
    NAIVE_SUBSTITUTION = "naive_substitution"
    UNCORRECTED = "uncorrected"


@dataclass(frozen=True)
class StepRatioRecord:
    """Importance ratio of one transition step.

    Attributes
    ----------
    step : int
        Step index t (z_t -> z_{t-1}).
    log_ratio : float
        log p_theta - log of the denominator policy, after clamping.
    ratio : float
        exp(log_ratio).
    clipped : bool
        Whether the clipped branch binds for the sign of the advantage.
    is_off_policy_step : bool
        Whether the step is a reused buffer step.
    """

    step: int
    log_ratio: float
    ratio: float
    clipped: bool
    is_off_policy_step: bool


def _check_epsilon(epsilon: float) -> None:
    if not 0.0 < epsilon < 1.0:
        raise ValueError(f"Clip range epsilon must lie in (0, 1). Received: {epsilon}")


def clipped_flags(
    ratios: NDArray[np.float64], advantages: NDArray[np.float64], epsilon: float
) -> NDArray[np.bool_]:
    """True where min(r A, clip(r) A) selects the clipped branch with zero slope."""
    return ((advantages > 0) & (ratios > 1.0 + epsilon)) | (
        (advantages < 0) & (ratios < 1.0 - epsilon)
    )


def _denominator(
    old_scores: NDArray[np.float64],
    stored: NDArray[np.float64],
    off_policy: NDArray[np.bool_],
    mode: ObjectiveMode,
) -> NDArray[np.float64]:
    if mode is ObjectiveMode.NAIVE_SUBSTITUTION:
        return np.where(off_policy, stored, old_scores)
    return old_scores


def step_ratios(
    member: Trajectory,
    vf_theta: VelocityField,
    vf_old: VelocityField,
    schedule: NoiseSchedule,
    advantage: float = 0.0,
    epsilon: float = 0.2,
    mode: ObjectiveMode | str = ObjectiveMode.SEQUENCE_CORRECTED,
) -> List[StepRatioRecord]:
    """Per-step importance ratios of one member, evaluated numerically.

    The denominator is the frozen rollout policy for every step, reused buffer steps
    included, except in naive_substitution mode where reused steps are divided by the
    stored buffer-policy log-probability instead.

    Parameters
    ----------
    member : Trajectory
        A full-length group member.
    vf_theta : VelocityField
        Policy being optimised.
    vf_old : VelocityField
        Frozen rollout policy.
    schedule : NoiseSchedule
        The step grid.
    advantage : float, optional
        Advantage of the member, used for the clipped flags, by default 0.
    epsilon : float, optional
        Clip range, by default 0.2.
    mode : ObjectiveMode | str, optional
        Objective variant, by default sequence_corrected.

    Returns
    -------
    List[StepRatioRecord]
        One record per step in generation order (t = T..1).
    """
    _check_epsilon(epsilon)
    mode = ObjectiveMode.parse(mode)
    off_policy = member.off_policy_mask
    theta = score_trajectory(member, vf_theta, schedule).data
    old = score_trajectory(member, vf_old, schedule).data
    log_ratios = np.clip(
        theta - _denominator(old, member.step_logprobs, off_policy, mode),
        -RATIO_LOG_CLAMP,
        RATIO_LOG_CLAMP,
    )
    ratios = np.exp(log_ratios)
    flags = clipped_flags(ratios, np.full_like(ratios, advantage), epsilon)
    return [
        StepRatioRecord(
            step=schedule.num_steps - index,
            log_ratio=float(log_ratios[index]),
            ratio=float(ratios[index]),
            clipped=bool(flags[index]),
            is_off_policy_step=bool(off_policy[index]),
        )
        for index in range(member.num_steps)
    ]


def _clipped_objective(
    theta_logprobs: Tensor,
    denominator: NDArray[np.float64],
    advantages: NDArray[np.float64],
    weights: Optional[NDArray[np.float64]],
    epsilon: float,
) -> Tuple[Tensor, NDArray[np.float64], int]:
    """mean_i w_i * (1/T) sum_t min(r A, clip(r, 1 - eps, 1 + eps) A)."""
    log_ratio = sub(theta_logprobs, denominator)
    ratio_events = int(np.count_nonzero(np.abs(log_ratio.data) > RATIO_LOG_CLAMP))
    ratio = exp(clamp(log_ratio, -RATIO_LOG_CLAMP, RATIO_LOG_CLAMP))
    step_advantages = np.repeat(advantages[:, np.newaxis], ratio.shape[1], axis=1)
    per_step = minimum(
        mul(ratio, step_advantages),
        mul(clamp(ratio, 1.0 - epsilon, 1.0 + epsilon), step_advantages),
    )
    per_member = tensor_mean(per_step, axis=1)
    if weights is not None:
        per_member = mul(per_member, weights)
    return tensor_mean(per_member), ratio.data, ratio_events


def kl_penalty(scored: ScoredBatch, reference: ScoredBatch) -> Tensor:
    """Mean over members and steps of the Gaussian KL between transitions that share a
    variance: |mu - mu_ref|^2 / (2 sigma_t^2)."""
    terms = [
        mul(tensor_sum(square(sub(mean, ref_mean.data)), axis=1), 0.5 / variance)
        for mean, ref_mean, variance in zip(
            scored.means, reference.means, scored.variances
        )
    ]
    return tensor_mean(stack(terms, axis=1))


def _flatten(groups: Sequence["GroupBatch"]) -> List[Trajectory]:
    members = [member for group in groups for member in group.members]
    if not members:
        raise ValueError("The surrogate needs at least one group member.")
    return members


def _gather(groups: Sequence["GroupBatch"], attribute: str) -> NDArray[np.float64]:
    return np.concatenate(
        [np.asarray(getattr(group, attribute), dtype=np.float64) for group in groups]
    )


def batch_surrogate_loss(
    groups: Sequence["GroupBatch"],
    vf_theta: VelocityField,
    vf_old: VelocityField,
    schedule: NoiseSchedule,
    epsilon: float = 0.2,
    mode: ObjectiveMode | str = ObjectiveMode.SEQUENCE_CORRECTED,
    kl_beta: float = 0.0,
    kl_reference: Optional[VelocityField] = None,
    counter: Optional[ClampCounter] = None,
) -> Tuple[Tensor, ClipStats]:
    """Negative clipped surrogate over every member of a batch of groups.

    Each member contributes w_i * (1/T) sum_t min(r_t A_i, clip(r_t, 1 - eps, 1 + eps)
    A_i) and the loss is minus the mean over members, so decreasing it ascends the
    objective. Correction weights are constants. Members of degenerate groups have
    zero advantage and contribute exactly zero.

    Parameters
    ----------
    groups : Sequence[GroupBatch]
        Groups with advantages and correction weights populated.
    vf_theta : VelocityField
        Policy being optimised; differentiable inside a computation tape.
    vf_old : VelocityField
        Frozen rollout policy of the iteration.
    schedule : NoiseSchedule
        The step grid.
    epsilon : float, optional
        Clip range, by default 0.2.
    mode : ObjectiveMode | str, optional
        Objective variant, by default sequence_corrected.
    kl_beta : float, optional
        Weight of the Gaussian KL penalty towards `kl_reference`, by default 0.
    kl_reference : Optional[VelocityField], optional
        Reference policy of the KL penalty, required when kl_beta > 0.
    counter : Optional[ClampCounter], optional
        Receives log-probability and ratio clamp events.

    Returns
    -------
    Tuple[Tensor, ClipStats]
        Scalar loss and clipping flags.

    Raises
    ------
    ValueError
        If there are no members, epsilon is out of range, or a KL penalty is
        requested without a reference.
    """
    _check_epsilon(epsilon)
    mode = ObjectiveMode.parse(mode)
    if kl_beta < 0:
        raise ValueError(f"kl_beta must be non-negative. Received: {kl_beta}")
    if kl_beta > 0 and kl_reference is None:
        raise ValueError("A KL penalty needs a reference policy.")
    members = _flatten(groups)

    advantages = _gather(groups, "advantages")
    log_weights = _gather(groups, "log_weights")
    weight_clamped = _gather(groups, "weight_clamped").astype(bool)
    weights = (
        _gather(groups, "correction_weights")
        if mode is ObjectiveMode.SEQUENCE_CORRECTED
        else np.ones(len(members))
    )
    off_policy = np.stack([member.off_policy_mask for member in members])
    stored = np.stack([member.step_logprobs for member in members])

    scored = score_batch(members, vf_theta, schedule, counter=counter)
    old_scores = score_batch(members, vf_old, schedule).logprobs.data
    objective, ratios, ratio_events = _clipped_objective(
        scored.logprobs,
        _denominator(old_scores, stored, off_policy, mode),
        advantages,
        weights,
        epsilon,
    )
    loss = neg(objective)
    if kl_beta > 0:
        assert kl_reference is not None
        reference = score_batch(members, kl_reference, schedule)
        loss = add(loss, mul(kl_penalty(scored, reference), kl_beta))

    if counter is not None:
        counter.ratio_events += ratio_events
    stats = ClipStats(
        clipped=clipped_flags(ratios, advantages[:, np.newaxis], epsilon),
        off_policy=off_policy,
        origins=[member.origin for member in members],
        log_weights=log_weights,
        weight_clamped=weight_clamped,
        ratio_clamp_events=ratio_events,
    )
    return loss, stats


def surrogate_loss(
    group: "GroupBatch",
    vf_theta: VelocityField,
    vf_old: VelocityField,
    schedule: NoiseSchedule,
    epsilon: float = 0.2,
    mode: ObjectiveMode | str = ObjectiveMode.SEQUENCE_CORRECTED,
    kl_beta: float = 0.0,
    kl_reference: Optional[VelocityField] = None,
    counter: Optional[ClampCounter] = None,
) -> Tuple[Tensor, ClipStats]:
    """Negative clipped surrogate of a single group; see `batch_surrogate_loss`."""
    return batch_surrogate_loss(
        [group],
        vf_theta,
        vf_old,
        schedule,
        epsilon=epsilon,
        mode=mode,
        kl_beta=kl_beta,
        kl_reference=kl_reference,
        counter=counter,
    )


def on_policy_grpo_loss(
    groups: Sequence["GroupBatch"],
    vf_theta: VelocityField,
    vf_old: VelocityField,
    schedule: NoiseSchedule,
    epsilon: float = 0.2,
    counter: Optional[ClampCounter] = None,
) -> Tuple[Tensor, ClipStats]:
    """Plain group-relative clipped surrogate for batches without reused trajectories.

    Raises
    ------
    ValueError
        If any member came from the replay buffer.
    """
    _check_epsilon(epsilon)
    members = _flatten(groups)
    if any(member.off_policy_steps for member in members):
        raise ValueError("The on-policy surrogate cannot score reused buffer steps.")
    advantages = _gather(groups, "advantages")

    scored = score_batch(members, vf_theta, schedule, counter=counter)
    old_scores = score_batch(members, vf_old, schedule).logprobs.data
    objective, ratios, ratio_events = _clipped_objective(
        scored.logprobs, old_scores, advantages, None, epsilon
    )
    if counter is not None:
        counter.ratio_events += ratio_events
    stats = ClipStats(
        clipped=clipped_flags(ratios, advantages[:, np.newaxis], epsilon),
        off_policy=np.zeros_like(ratios, dtype=bool),
        origins=[member.origin for member in members],
        log_weights=np.zeros(len(members)),
        weight_clamped=np.zeros(len(members), dtype=bool),
        ratio_clamp_events=ratio_events,
    )
    return neg(objective), stats
