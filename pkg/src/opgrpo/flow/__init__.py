"""Flow package. The conditional velocity field, its noise schedule, the deterministic
and stochastic samplers, and per-step log-probability scoring of trajectories."""

from opgrpo.flow._sampler import (
    LOGPROB_CLAMP,
    ClampCounter,
    PrefixMismatchError,
    ScoredBatch,
    euler_sample,
    euler_step,
    gaussian_step_logprob,
    rollout_trajectory,
    sample_batch,
    score_batch,
    score_latents,
    score_trajectory,
    sde_continue,
    sde_step,
    step_logprob_profile,
    transition_logprob,
)
from opgrpo.flow._schedule import NoiseSchedule, NonPositiveVarianceError
from opgrpo.flow._trajectory import Condition, Origin, Trajectory, task_conditions
from opgrpo.flow._velocity_field import FieldArchitecture, VelocityField
