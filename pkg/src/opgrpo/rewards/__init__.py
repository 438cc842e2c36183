"""Rewards package. Bounded analytic rewards on final samples that stand in for learned
reward models on 2-D toy tasks."""

from opgrpo.rewards._reward import (
    RewardDimensionError,
    RewardKind,
    RewardSpec,
    default_centers,
    reward,
    reward_batch,
)
