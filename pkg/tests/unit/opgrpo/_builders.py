import json
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from opgrpo.buffer import ReplayBuffer
from opgrpo.diagnostics import BufferEvent, DecayEvent, OfferEvent
from opgrpo.flow import (
    Condition,
    FieldArchitecture,
    NoiseSchedule,
    Origin,
    Trajectory,
    VelocityField,
    rollout_trajectory,
)
from opgrpo.rewards import RewardSpec, default_centers
from opgrpo.rollout import GroupBatch, GroupRequest, build_groups
from opgrpo.training import TrainerConfig
from opgrpo.utilities import RngStreams

SMALL_ARCHITECTURE = FieldArchitecture(
    latent_dim=2,
    num_conditions=4,
    hidden_sizes=(8, 8),
    time_embedding_dim=3,
    condition_embedding_dim=3,
)
SMALL_SCHEDULE = NoiseSchedule(num_steps=4, sigma_max=1.0, sigma_min=0.05)
SMALL_REWARD = RewardSpec(centers=default_centers(4))


def small_config(**overrides) -> TrainerConfig:
    """A config that trains in a fraction of a second per iteration."""
    settings = dict(
        group_size=4,
        groups_per_iteration=4,
        total_iterations=3,
        checkpoint_every=0,
        off_policy_fraction=0.5,
        architecture=SMALL_ARCHITECTURE,
        schedule=SMALL_SCHEDULE,
        reward=SMALL_REWARD,
    )
    settings.update(overrides)
    return TrainerConfig(**settings)


def small_field(seed: int = 0, requires_grad: bool = True) -> VelocityField:
    return VelocityField(
        SMALL_ARCHITECTURE,
        SMALL_SCHEDULE.num_steps,
        seed=seed,
        requires_grad=requires_grad,
    )


def perturbed(field: VelocityField, scale: float, seed: int = 1) -> VelocityField:
    """Trainable copy of a field with Gaussian noise of the given scale added to every
    weight."""
    rng = np.random.default_rng(seed)
    copy = field.copy(requires_grad=True)
    copy.load_state_dict(
        {
            name: values + scale * rng.standard_normal(values.shape)
            for name, values in field.state_dict().items()
        }
    )
    return copy


def sampled_trajectories(
    field: VelocityField,
    condition_id: int,
    count: int,
    seed: int = 0,
    schedule: NoiseSchedule = SMALL_SCHEDULE,
) -> List[Trajectory]:
    condition = Condition.one_hot(condition_id, field.architecture.num_conditions)
    rng = np.random.default_rng(seed)
    return [rollout_trajectory(field, condition, schedule, rng) for _ in range(count)]


def synthetic_group(
    condition_id: int, rewards: Sequence[float], num_conditions: int = 16
) -> List[Trajectory]:
    """One-step, one-dimensional trajectories carrying the given rewards."""
    condition = Condition.one_hot(condition_id, num_conditions)
    return [
        Trajectory(
            condition=condition,
            latents=[[0.0], [float(index)]],
            step_logprobs=[-1.0],
            reward=value,
            origin=Origin.ON_POLICY,
        )
        for index, value in enumerate(rewards)
    ]


def random_buffer_events(
    rng: np.random.Generator,
    count: int,
    num_conditions: int,
    group_size: int = 4,
    decay_probability: float = 0.3,
) -> List[BufferEvent]:
    events: List[BufferEvent] = []
    for iteration in range(count):
        if rng.random() < decay_probability:
            events.append(DecayEvent())
            continue
        # Rounded rewards make exact ties between groups and retention scores common.
        rewards = tuple(np.round(rng.random(group_size), 1).tolist())
        events.append(
            OfferEvent(int(rng.integers(num_conditions)), rewards, iteration=iteration)
        )
    return events


def drive_replay_buffer(
    events: Sequence[BufferEvent],
    capacity: int,
    decay_rate: float = 0.98,
    num_conditions: int = 16,
) -> ReplayBuffer:
    buffer = ReplayBuffer(capacity, decay_rate)
    for event in events:
        if isinstance(event, DecayEvent):
            buffer.decay()
        else:
            buffer.offer(
                synthetic_group(event.condition_id, event.rewards, num_conditions),
                iteration=event.iteration,
            )
    return buffer


def filled_buffer(
    policy: VelocityField, reward: float = 0.5, seed: int = 100
) -> ReplayBuffer:
    """A buffer holding one trajectory of `policy` for every small-task condition."""
    num_conditions = policy.architecture.num_conditions
    buffer = ReplayBuffer(num_conditions)
    for condition_id in range(num_conditions):
        (trajectory,) = sampled_trajectories(
            policy, condition_id, 1, seed=seed + condition_id
        )
        buffer.offer([trajectory.with_reward(reward)], iteration=0)
    return buffer


def hybrid_groups(
    vf_old: VelocityField,
    buffer: Optional[ReplayBuffer],
    use_buffer: Sequence[bool] = (True, False),
    truncation_step: int = 2,
    seed: int = 0,
    iteration: int = 1,
    group_size: int = 4,
) -> List[GroupBatch]:
    """Groups for conditions 0, 1, ... of the small task, slot i reusing the buffer when
    use_buffer[i] is set."""
    requests = [
        GroupRequest(Condition.one_hot(slot, SMALL_ARCHITECTURE.num_conditions), flag)
        for slot, flag in enumerate(use_buffer)
    ]
    return build_groups(
        requests,
        vf_old,
        buffer,
        SMALL_SCHEDULE,
        SMALL_REWARD,
        group_size,
        truncation_step,
        RngStreams(seed, iteration),
        iteration=iteration,
    )


def write_config_toml(path: Path, config: TrainerConfig) -> Path:
    """Write a config as TOML. JSON literals of the plain values are valid TOML."""
    data = config.to_dict()
    lines = []
    sections = []
    for key, value in data.items():
        if isinstance(value, dict):
            sections.append((key, value))
        elif value is not None:
            lines.append(f"{key} = {json.dumps(value)}")
    for name, values in sections:
        lines.append(f"\n[{name}]")
        lines.extend(f"{key} = {json.dumps(value)}" for key, value in values.items())
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path
