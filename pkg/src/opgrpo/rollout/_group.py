"""This module assembles hybrid groups: fresh rollouts from the frozen policy plus, for
some groups, one buffer trajectory whose late steps are regenerated."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from numpy.typing import NDArray

from opgrpo.buffer import ReplayBuffer
from opgrpo.flow import (
    ClampCounter,
    Condition,
    NoiseSchedule,
    Origin,
    Trajectory,
    VelocityField,
    rollout_trajectory,
    sample_batch,
)
from opgrpo.objective import (
    DEFAULT_LOG_WEIGHT_BOUNDS,
    ON_POLICY_WEIGHT,
    CorrectionWeight,
    correction_weight,
)
from opgrpo.rewards import RewardSpec, reward, reward_batch
from opgrpo.rollout._advantages import (
    DEFAULT_STD_FLOOR,
    GroupSizeError,
    compute_advantages,
)
from opgrpo.utilities import ControlStream, RngStreams

logger = logging.getLogger(__name__)


class BufferMissError(LookupError):
    """Error raised when a group should reuse a buffer trajectory the buffer lacks."""

    def __init__(self, condition_id: int) -> None:
        self.condition_id = condition_id
        self.message = (
            f"Group for condition {condition_id} requested a buffer member but the "
            "buffer holds no entry for it."
        )
        super().__init__(self.message)


@dataclass
class GroupBatch:
    """G members sharing a condition with their advantages and correction weights.

    Attributes
    ----------
    condition : Condition
        Shared condition.
    members : List[Trajectory]
        Rewarded members in shuffled order.
    advantages : NDArray[np.float64]
        Group-normalised advantage per member.
    correction_weights : NDArray[np.float64]
        Clamped sequence-level weight per member, 1.0 for on-policy members.
    log_weights : NDArray[np.float64]
        Unclamped log weight per member.
    weight_clamped : NDArray[np.bool_]
        Whether each weight hit its bounds.
    degenerate : bool
        Whether the rewards were too uniform to normalise.
    slot : int
        Position of the group within its iteration.
    """

    condition: Condition
    members: List[Trajectory]
    advantages: NDArray[np.float64]
    correction_weights: NDArray[np.float64]
    log_weights: NDArray[np.float64] = field(default_factory=lambda: np.zeros(0))
    weight_clamped: NDArray[np.bool_] = field(
        default_factory=lambda: np.zeros(0, dtype=bool)
    )
    degenerate: bool = False
    slot: int = 0

    def __post_init__(self) -> None:
        size = len(self.members)
        self.advantages = np.asarray(self.advantages, dtype=np.float64)
        self.correction_weights = np.asarray(self.correction_weights, dtype=np.float64)
        if self.log_weights.size == 0:
            self.log_weights = np.log(self.correction_weights)
        if self.weight_clamped.size == 0:
            self.weight_clamped = np.zeros(size, dtype=bool)
        for name in (
            "advantages",
            "correction_weights",
            "log_weights",
            "weight_clamped",
        ):
            if np.shape(getattr(self, name)) != (size,):
                raise ValueError(f"{name} must hold one entry per member ({size}).")
        if any(member.condition != self.condition for member in self.members):
            raise ValueError("All members of a group must share its condition.")
        if sum(member.origin is Origin.BUFFER for member in self.members) > 1:
            raise ValueError("A group holds at most one buffer member.")
        if not np.all(np.isfinite(self.correction_weights)) or np.any(
            self.correction_weights <= 0
        ):
            raise ValueError(
                "Correction weights must be finite and positive. "
                f"Received: {self.correction_weights}"
            )

    @property
    def group_size(self) -> int:
        """Number of members G."""
        return len(self.members)

    @property
    def contains_buffer_member(self) -> bool:
        """Whether one member came from the replay buffer."""
        return any(member.origin is Origin.BUFFER for member in self.members)

    @property
    def rewards(self) -> NDArray[np.float64]:
        """Reward of each member."""
        return np.array([member.reward for member in self.members], dtype=np.float64)

    def to_dict(self) -> dict:
        """JSON-serialisable dump, used when a loss turns non-finite."""
        return {
            "slot": self.slot,
            "condition_id": self.condition.id,
            "degenerate": self.degenerate,
            "advantages": self.advantages.tolist(),
            "correction_weights": self.correction_weights.tolist(),
            "log_weights": self.log_weights.tolist(),
            "members": [member.to_dict() for member in self.members],
        }


@dataclass(frozen=True)
class GroupRequest:
    """A group slot of an iteration: its condition and whether it reuses the buffer."""

    condition: Condition
    use_buffer: bool = False


def truncate_and_regenerate(
    prefix: Trajectory,
    truncation_step: int,
    vf: VelocityField,
    schedule: NoiseSchedule,
    rng: np.random.Generator,
    birth_iteration: int = 0,
    counter: Optional[ClampCounter] = None,
) -> Trajectory:
    """Keep the buffer trajectory's early steps T..t_off and resample the rest.

    The kept steps keep their stored log-probabilities, which stay the off-policy
    record for the correction weight; the regenerated steps carry the log-probabilities
    of `vf`. The result is marked with `truncation_step` so the objective can tell the
    two apart. t_off = 0 returns the prefix unchanged and t_off = T discards it,
    giving a plain on-policy rollout.

    Raises
    ------
    PrefixMismatchError
        If t_off lies outside [0, T] or the prefix does not fit the schedule.
    """
    return rollout_trajectory(
        vf,
        prefix.condition,
        schedule,
        rng,
        truncation_step=truncation_step,
        prefix=prefix,
        birth_iteration=birth_iteration,
        counter=counter,
    )


def _weights(
    members: Sequence[Trajectory],
    vf_old: VelocityField,
    schedule: NoiseSchedule,
    log_weight_bounds: Tuple[float, float],
    counter: Optional[ClampCounter],
) -> List[CorrectionWeight]:
    return [
        correction_weight(
            member, vf_old, schedule, log_bounds=log_weight_bounds, counter=counter
        )
        if member.off_policy_steps
        else ON_POLICY_WEIGHT
        for member in members
    ]


def build_groups(
    requests: Sequence[GroupRequest],
    vf_old: VelocityField,
    buffer: Optional[ReplayBuffer],
    schedule: NoiseSchedule,
    reward_spec: RewardSpec,
    group_size: int,
    truncation_step: int,
    streams: RngStreams,
    iteration: int = 0,
    std_floor: float = DEFAULT_STD_FLOOR,
    log_weight_bounds: Tuple[float, float] = DEFAULT_LOG_WEIGHT_BOUNDS,
    counter: Optional[ClampCounter] = None,
) -> List[GroupBatch]:
    """Roll out every group of an iteration against the frozen policy.

    Fresh members of all groups are sampled as one batch. Member i of the group in
    slot s draws its noise from the stream keyed (s, condition id, i), and the buffer
    member of a reusing group uses index G - 1, so results do not depend on batching.
    Each group is shuffled with its own stream before advantages are computed.

    Parameters
    ----------
    requests : Sequence[GroupRequest]
        One request per group slot, in slot order.
    vf_old : VelocityField
        Frozen rollout policy.
    buffer : Optional[ReplayBuffer]
        Source of reused trajectories; may be None when no request uses it.
    schedule : NoiseSchedule
        The step grid.
    reward_spec : RewardSpec
        Reward applied to final samples.
    group_size : int
        Members per group G.
    truncation_step : int
        t_off for buffer members.
    streams : RngStreams
        Keyed random streams of the iteration.
    iteration : int, optional
        Recorded as birth iteration of new trajectories.
    std_floor : float, optional
        Degeneracy threshold of the advantage normalisation.
    log_weight_bounds : Tuple[float, float], optional
        Bounds on the log correction weight.
    counter : Optional[ClampCounter], optional
        Receives clamp events.

    Returns
    -------
    List[GroupBatch]
        One group per request.

    Raises
    ------
    GroupSizeError
        If group_size is below two.
    BufferMissError
        If a request reuses a condition the buffer lacks.
    """
    if group_size < 2:
        raise GroupSizeError(group_size)
    num_steps = schedule.num_steps
    latent_dim = vf_old.architecture.latent_dim

    fresh_ids: List[int] = []
    fresh_noise: List[NDArray[np.float64]] = []
    prefixes: List[Optional[Trajectory]] = []
    for slot, request in enumerate(requests):
        prefix = None
        if request.use_buffer:
            if buffer is None or request.condition not in buffer:
                raise BufferMissError(request.condition.id)
            prefix = buffer.retrieve(request.condition)
        prefixes.append(prefix)
        for index in range(group_size - (prefix is not None)):
            member_rng = streams.member(slot, request.condition.id, index)
            fresh_noise.append(member_rng.standard_normal((num_steps + 1, latent_dim)))
            fresh_ids.append(request.condition.id)

    latents, step_logprobs = sample_batch(
        vf_old, fresh_ids, schedule, np.stack(fresh_noise), counter=counter
    )
    fresh_rewards = reward_batch(latents[:, -1], fresh_ids, reward_spec)

    groups: List[GroupBatch] = []
    cursor = 0
    for slot, (request, prefix) in enumerate(zip(requests, prefixes)):
        fresh = group_size - (prefix is not None)
        members = [
            Trajectory(
                condition=request.condition,
                latents=latents[cursor + i],
                step_logprobs=step_logprobs[cursor + i],
                reward=float(fresh_rewards[cursor + i]),
                origin=Origin.ON_POLICY,
                birth_iteration=iteration,
            )
            for i in range(fresh)
        ]
        cursor += fresh
        if prefix is not None:
            mixed = truncate_and_regenerate(
                prefix,
                truncation_step,
                vf_old,
                schedule,
                streams.member(slot, request.condition.id, group_size - 1),
                birth_iteration=iteration,
                counter=counter,
            )
            if mixed.reward is None:
                mixed = mixed.with_reward(
                    reward(mixed.sample, request.condition, reward_spec)
                )
            members.append(mixed)

        order = streams.control(ControlStream.SHUFFLE, slot).permutation(group_size)
        members = [members[i] for i in order]
        advantages, degenerate = compute_advantages(
            [m.reward for m in members], std_floor=std_floor
        )
        weights = _weights(members, vf_old, schedule, log_weight_bounds, counter)
        groups.append(
            GroupBatch(
                condition=request.condition,
                members=members,
                advantages=advantages,
                correction_weights=np.array([w.value for w in weights]),
                log_weights=np.array([w.log_value for w in weights]),
                weight_clamped=np.array([w.clamped for w in weights], dtype=bool),
                degenerate=degenerate,
                slot=slot,
            )
        )
    return groups


def build_group(
    condition: Condition,
    vf_old: VelocityField,
    buffer: Optional[ReplayBuffer],
    schedule: NoiseSchedule,
    reward_spec: RewardSpec,
    group_size: int,
    truncation_step: int,
    streams: RngStreams,
    use_buffer: bool = False,
    iteration: int = 0,
    std_floor: float = DEFAULT_STD_FLOOR,
    log_weight_bounds: Tuple[float, float] = DEFAULT_LOG_WEIGHT_BOUNDS,
    counter: Optional[ClampCounter] = None,
) -> GroupBatch:
    """Build a single group in slot 0; see `build_groups`."""
    return build_groups(
        [GroupRequest(condition, use_buffer)],
        vf_old,
        buffer,
        schedule,
        reward_spec,
        group_size,
        truncation_step,
        streams,
        iteration=iteration,
        std_floor=std_floor,
        log_weight_bounds=log_weight_bounds,
        counter=counter,
    )[0]
