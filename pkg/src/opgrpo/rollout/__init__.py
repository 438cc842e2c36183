"""Rollout package. Group construction from fresh and reused trajectories, truncation
and regeneration of reused trajectories, and group-relative advantages."""

from opgrpo.rollout._advantages import (
    DEFAULT_STD_FLOOR,
    GroupSizeError,
    compute_advantages,
)
from opgrpo.rollout._group import (
    BufferMissError,
    GroupBatch,
    GroupRequest,
    build_group,
    build_groups,
    truncate_and_regenerate,
)
