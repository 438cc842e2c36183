"""This module computes the sequence-level importance weight that corrects a reused
trajectory for the policy shift between the policy that generated it and the current
rollout policy."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from opgrpo.flow import (
    ClampCounter,
    NoiseSchedule,
    Origin,
    Trajectory,
    VelocityField,
    score_trajectory,
)

DEFAULT_LOG_WEIGHT_BOUNDS = (-5.0, 5.0)


class MissingOffPolicyRecordError(ValueError):
    """Error raised when a member has off-policy steps without a stored log-probability
    of the policy that generated them."""

    def __init__(self, num_steps: int, expected: int) -> None:
        self.message = (
            f"Member records {num_steps} step log-probabilities but the schedule has "
            f"{expected} steps, so some off-policy steps have no generating-policy "
            "record."
        )
        super().__init__(self.message)


@dataclass(frozen=True)
class CorrectionWeight:
    """Importance weight of one member.

    Attributes
    ----------
    value : float
        exp of the clamped log value; exactly 1.0 for members without off-policy
        steps.
    log_value : float
        Unclamped sum over off-policy steps of (log p_old - log p_off).
    clamped : bool
        Whether log_value lay outside the bounds and value was clamped.
    """

    value: float
    log_value: float
    clamped: bool


ON_POLICY_WEIGHT = CorrectionWeight(value=1.0, log_value=0.0, clamped=False)


def off_policy_mask(
    member: Trajectory, truncation_step: Optional[int] = None
) -> np.ndarray:
    """Off-policy steps of a member, optionally overriding its truncation marker."""
    if truncation_step is None or member.origin is not Origin.BUFFER:
        return member.off_policy_mask
    mask = np.zeros(member.num_steps, dtype=bool)
    mask[: max(member.num_steps - truncation_step, 0)] = True
    return mask


def correction_weight(
    member: Trajectory,
    vf_old: VelocityField,
    schedule: NoiseSchedule,
    truncation_step: Optional[int] = None,
    log_bounds: Tuple[float, float] = DEFAULT_LOG_WEIGHT_BOUNDS,
    counter: Optional[ClampCounter] = None,
) -> CorrectionWeight:
    """Sequence-level weight prod_t p_old(step t) / p_off(step t) over the off-policy
    steps of a member.

    The product is accumulated in log space from the member's stored step
    log-probabilities (p_off) and its scores under the frozen rollout policy (p_old),
    then clamped to `log_bounds` and exponentiated. The result is a plain float, so no
    gradient flows through it.

    Parameters
    ----------
    member : Trajectory
        Group member; only buffer-origin members have off-policy steps.
    vf_old : VelocityField
        Frozen rollout policy of the current iteration.
    schedule : NoiseSchedule
        The step grid.
    truncation_step : Optional[int], optional
        Overrides the member's own truncation marker when given.
    log_bounds : Tuple[float, float], optional
        Bounds on the log weight, by default (-5, 5).
    counter : Optional[ClampCounter], optional
        Receives a weight clamp event when the bounds bind.

    Returns
    -------
    CorrectionWeight

    Raises
    ------
    MissingOffPolicyRecordError
        If the member does not carry a log-probability for every step.
    """
    low, high = log_bounds
    if low > high:
        raise ValueError(f"Log weight bounds are inverted: {log_bounds}")
    mask = off_policy_mask(member, truncation_step)
    if not mask.any():
        return ON_POLICY_WEIGHT
    if member.num_steps != schedule.num_steps:
        raise MissingOffPolicyRecordError(member.num_steps, schedule.num_steps)

    old_scores = score_trajectory(member, vf_old, schedule).data
    log_value = float(np.sum(old_scores[mask] - member.step_logprobs[mask]))
    clamped = not low <= log_value <= high
    if clamped and counter is not None:
        counter.weight_events += 1
    return CorrectionWeight(
        value=math.exp(min(max(log_value, low), high)),
        log_value=log_value,
        clamped=clamped,
    )
