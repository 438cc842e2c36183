"""This module provides the condition-unique replay buffer of high-reward
trajectories."""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass
from typing import Dict, Iterator, List, Optional, Sequence

import numpy as np

from opgrpo.flow import Condition, Origin, Trajectory

logger = logging.getLogger(__name__)


class MixedConditionError(ValueError):
    """Error raised when a group offered to the buffer mixes conditions."""

    def __init__(self) -> None:
        self.message = "All trajectories offered together must share one condition."
        super().__init__(self.message)


class MissingConditionError(KeyError):
    """Error raised when retrieving a condition the buffer holds no entry for."""

    def __init__(self, condition_id: int) -> None:
        self.condition_id = condition_id
        self.message = f"The replay buffer holds no entry for condition {condition_id}."
        super().__init__(self.message)

    def __str__(self) -> str:
        return self.message


class SampleSizeError(ValueError):
    """Error raised when more distinct conditions are requested than the buffer holds."""

    def __init__(self, count: int, population: int) -> None:
        self.message = (
            f"Cannot sample {count} distinct conditions from a buffer holding "
            f"{population}."
        )
        super().__init__(self.message)


@dataclass
class BufferEntry:
    """A stored trajectory with its frozen step log-probabilities, the decayed reward it
    competes for retention with, and the iteration it was inserted."""

    trajectory: Trajectory
    retention_score: float
    insert_iteration: int

    @property
    def condition_id(self) -> int:
        """Condition the entry is stored under."""
        return self.trajectory.condition.id

    def to_dict(self) -> dict:
        """JSON-serialisable form."""
        return {
            "condition_id": self.condition_id,
            "retention_score": self.retention_score,
            "reward": self.trajectory.reward,
            "insert_iteration": self.insert_iteration,
            "birth_iteration": self.trajectory.birth_iteration,
            "total_logprob": self.trajectory.total_logprob,
            "step_logprobs": self.trajectory.step_logprobs.tolist(),
            "sample": self.trajectory.sample.tolist(),
        }


class ReplayBuffer:
    """Capacity-bounded store holding at most one trajectory per condition.

    Each group offers its highest-reward member. The candidate competes with the entry
    of its own condition if there is one; otherwise it fills a free slot, or when the
    buffer is full, replaces the entry with the lowest retention score if it beats
    it. Retention scores start at the trajectory's reward and decay geometrically, so
    old entries are eventually displaced by newer ones.

    Parameters
    ----------
    capacity : int
        Maximum number of entries.
    decay_rate : float, optional
        Factor gamma in (0, 1] applied to every retention score per decay, by default
        0.98.

    Raises
    ------
    ValueError
        If capacity is not a positive integer or decay_rate lies outside (0, 1].
    """

    def __init__(self, capacity: int, decay_rate: float = 0.98) -> None:
        if isinstance(capacity, bool) or int(capacity) != capacity or capacity < 1:
            raise ValueError(
                f"capacity must be a positive integer. Received: {capacity}"
            )
        if not 0.0 < decay_rate <= 1.0:
            raise ValueError(f"decay_rate must lie in (0, 1]. Received: {decay_rate}")
        self.capacity = int(capacity)
        self.decay_rate = float(decay_rate)
        self._entries: Dict[int, BufferEntry] = {}

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, condition: Condition | int) -> bool:
        key = condition.id if isinstance(condition, Condition) else int(condition)
        return key in self._entries

    def __iter__(self) -> Iterator[BufferEntry]:
        return iter(self.entries)

    @property
    def entries(self) -> List[BufferEntry]:
        """Entries in ascending condition id order."""
        return [self._entries[key] for key in sorted(self._entries)]

    @property
    def condition_ids(self) -> List[int]:
        """Stored condition ids in ascending order."""
        return sorted(self._entries)

    def min_entry(self) -> Optional[BufferEntry]:
        """The eviction candidate: lowest retention score, ties to the lowest id."""
        if not self._entries:
            return None
        return min(self.entries, key=lambda e: (e.retention_score, e.condition_id))

    def mean_retention(self) -> float:
        """Mean retention score, 0.0 for an empty buffer."""
        if not self._entries:
            return 0.0
        return float(np.mean([e.retention_score for e in self.entries]))

    def offer(self, group: Sequence[Trajectory], iteration: int = 0) -> bool:
        """Offer the best member of a group for storage.

        Only members with at least one step generated in this iteration compete, so a
        buffer trajectory reused whole is skipped and keeps its decayed score.

        Parameters
        ----------
        group : Sequence[Trajectory]
            Rewarded trajectories sharing one condition.
        iteration : int, optional
            Current training iteration, recorded on insertion.

        Returns
        -------
        bool
            Whether a candidate was stored. False when no member is eligible.

        Raises
        ------
        MixedConditionError
            If the trajectories do not share one condition.
        ValueError
            If the group is empty or a member has no finite reward.
        """
        if not group:
            raise ValueError("Cannot offer an empty group.")
        if len({member.condition.id for member in group}) != 1:
            raise MixedConditionError()
        if any(member.reward is None for member in group):
            raise ValueError("Every offered trajectory needs a reward.")
        rewards = np.array([member.reward for member in group], dtype=np.float64)
        if not np.all(np.isfinite(rewards)):
            raise ValueError(f"Offered rewards must be finite. Received: {rewards}")

        # A buffer trajectory replayed unchanged is never a candidate.
        eligible = [i for i, member in enumerate(group) if member.generated_steps]
        if not eligible:
            return False
        best = eligible[int(np.argmax(rewards[eligible]))]
        candidate = group[best]
        condition_id = candidate.condition.id
        reward = float(rewards[best])

        incumbent = self._entries.get(condition_id)
        if incumbent is not None:
            if reward <= incumbent.retention_score:
                return False
        elif len(self._entries) >= self.capacity:
            weakest = self.min_entry()
            assert weakest is not None
            if reward <= weakest.retention_score:
                return False
            logger.debug(
                "Evicting condition %d (retention %.4f) for condition %d (reward %.4f)",
                weakest.condition_id,
                weakest.retention_score,
                condition_id,
                reward,
            )
            del self._entries[weakest.condition_id]

        self._entries[condition_id] = BufferEntry(
            trajectory=dataclasses.replace(candidate, truncation_step=None),
            retention_score=reward,
            insert_iteration=int(iteration),
        )
        return True

    def decay(self) -> None:
        """Multiply every retention score by the decay rate. Rewards are unchanged."""
        for entry in self._entries.values():
            entry.retention_score *= self.decay_rate

    def sample_conditions(self, count: int, rng: np.random.Generator) -> List[Condition]:
        """Draw distinct stored conditions uniformly at random.

        Raises
        ------
        SampleSizeError
            If count is negative or exceeds the number of entries.
        """
        if count < 0 or count > len(self._entries):
            raise SampleSizeError(count, len(self._entries))
        if count == 0:
            return []
        ids = np.array(self.condition_ids, dtype=np.int64)
        chosen = rng.choice(ids, size=count, replace=False)
        return [self._entries[int(key)].trajectory.condition for key in chosen]

    def retrieve(self, condition: Condition | int) -> Trajectory:
        """Return the stored trajectory of a condition tagged as buffer origin.

        Retrieval is non-destructive and the stored step log-probabilities are returned
        unchanged.

        Raises
        ------
        MissingConditionError
            If the condition has no entry.
        """
        key = condition.id if isinstance(condition, Condition) else int(condition)
        entry = self._entries.get(key)
        if entry is None:
            raise MissingConditionError(key)
        return dataclasses.replace(
            entry.trajectory, origin=Origin.BUFFER, truncation_step=None
        )

    def restore(self, entries: Sequence[BufferEntry]) -> None:
        """Replace the contents with the given entries, e.g. read from a checkpoint.

        Raises
        ------
        ValueError
            If the entries exceed capacity or repeat a condition.
        """
        keyed = {entry.condition_id: entry for entry in entries}
        if len(keyed) != len(entries):
            raise ValueError("Restored entries repeat a condition.")
        if len(keyed) > self.capacity:
            raise ValueError(
                f"Cannot restore {len(keyed)} entries into capacity {self.capacity}."
            )
        self._entries = keyed
