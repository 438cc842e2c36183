"""This module records where the clipped branch of the surrogate binds."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Sequence

import numpy as np
from numpy.typing import NDArray

from opgrpo.flow import Origin
from opgrpo.utilities import OptionEnum


class StepFilter(OptionEnum):
    """An enum detailing which (member, step) pairs a clip fraction is taken over.

    Options are:
        all - every step of every member\n
        on_policy - steps sampled by the current rollout policy\n
        off_policy - reused steps still carrying an earlier policy's log-probability\n
        buffer_member - every step of members that came from the replay buffer
    """

    ALL = "all"
    ON_POLICY = "on_policy"
    OFF_POLICY = "off_policy"
    BUFFER_MEMBER = "buffer_member"


class EmptySelectionError(ValueError):
    """Error raised when a clip fraction is requested over no (member, step) pairs."""

    def __init__(self, step_filter: StepFilter) -> None:
        self.message = f"No (member, step) pairs match the filter `{step_filter}`."
        super().__init__(self.message)


@dataclass
class ClipStats:
    """Per (member, step) clipping flags of one surrogate evaluation.

    Attributes
    ----------
    clipped : NDArray[np.bool_]
        Shape (N, T); True where the clipped branch binds for the sign of the
        advantage.
    off_policy : NDArray[np.bool_]
        Shape (N, T); True for reused buffer-prefix steps.
    origins : List[Origin]
        Origin of each member.
    log_weights : NDArray[np.float64]
        Unclamped log correction weight of each member.
    weight_clamped : NDArray[np.bool_]
        Whether each member's correction weight was clamped.
    ratio_clamp_events : int
        Number of per-step log-ratios clipped before exponentiation.
    """

    clipped: NDArray[np.bool_]
    off_policy: NDArray[np.bool_]
    origins: List[Origin] = field(default_factory=list)
    log_weights: NDArray[np.float64] = field(default_factory=lambda: np.zeros(0))
    weight_clamped: NDArray[np.bool_] = field(
        default_factory=lambda: np.zeros(0, dtype=bool)
    )
    ratio_clamp_events: int = 0

    @property
    def num_members(self) -> int:
        """Number of members covered."""
        return int(self.clipped.shape[0])

    @property
    def member_clip_fractions(self) -> NDArray[np.float64]:
        """Fraction of clipped steps per member."""
        return self.clipped.mean(axis=1)

    def selection(self, step_filter: StepFilter | str) -> NDArray[np.bool_]:
        """Boolean (N, T) mask of the pairs a filter selects."""
        kind = StepFilter.parse(step_filter)
        if kind is StepFilter.ALL:
            return np.ones_like(self.clipped, dtype=bool)
        if kind is StepFilter.ON_POLICY:
            return ~self.off_policy
        if kind is StepFilter.OFF_POLICY:
            return self.off_policy.copy()
        from_buffer = np.array([o is Origin.BUFFER for o in self.origins], dtype=bool)
        return np.repeat(from_buffer[:, np.newaxis], self.clipped.shape[1], axis=1)

    @classmethod
    def concatenate(cls, stats: Sequence["ClipStats"]) -> "ClipStats":
        """Stack the members of several evaluations into one record."""
        if not stats:
            raise ValueError("Nothing to concatenate.")
        return cls(
            clipped=np.concatenate([s.clipped for s in stats]),
            off_policy=np.concatenate([s.off_policy for s in stats]),
            origins=[o for s in stats for o in s.origins],
            log_weights=np.concatenate([s.log_weights for s in stats]),
            weight_clamped=np.concatenate([s.weight_clamped for s in stats]),
            ratio_clamp_events=sum(s.ratio_clamp_events for s in stats),
        )


def clip_fraction(
    stats: ClipStats, step_filter: StepFilter | str = StepFilter.ALL
) -> float:
    """Fraction of selected (member, step) pairs where clipping binds.

    Parameters
    ----------
    stats : ClipStats
        Flags from a surrogate evaluation.
    step_filter : StepFilter | str, optional
        Which pairs to consider, by default all.

    Returns
    -------
    float

    Raises
    ------
    EmptySelectionError
        If the filter selects nothing.
    """
    kind = StepFilter.parse(step_filter)
    mask = stats.selection(kind)
    if not mask.any():
        raise EmptySelectionError(kind)
    return float(stats.clipped[mask].mean())
