"""This module replays buffer events with a deliberately naive reference
implementation of the retention rules."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence, Tuple, Union


@dataclass(frozen=True)
class OfferEvent:
    """A group of rewards offered under one condition."""

    condition_id: int
    rewards: Tuple[float, ...]
    iteration: int = 0


@dataclass(frozen=True)
class DecayEvent:
    """One decay of every retention score."""


BufferEvent = Union[OfferEvent, DecayEvent]


@dataclass
class ReferenceEntry:
    """State of one stored condition."""

    condition_id: int
    reward: float
    retention_score: float
    insert_iteration: int


def reference_buffer_replay(
    events: Sequence[BufferEvent], capacity: int, decay_rate: float = 0.98
) -> List[ReferenceEntry]:
    """Apply the events in order to an empty buffer and return its entries sorted by
    condition id.

    Entries live in a plain list that is scanned in full for every lookup.
    """
    entries: List[ReferenceEntry] = []
    for event in events:
        if isinstance(event, DecayEvent):
            for entry in entries:
                entry.retention_score = entry.retention_score * decay_rate
            continue

        best = event.rewards[0]
        for value in event.rewards[1:]:
            if value > best:
                best = value
        candidate = ReferenceEntry(
            event.condition_id, float(best), float(best), event.iteration
        )

        position = -1
        for index, entry in enumerate(entries):
            if entry.condition_id == event.condition_id:
                position = index
        if position >= 0:
            if best > entries[position].retention_score:
                entries[position] = candidate
            continue
        if len(entries) < capacity:
            entries.append(candidate)
            continue

        weakest = 0
        for index, entry in enumerate(entries):
            current = entries[weakest]
            if entry.retention_score < current.retention_score or (
                entry.retention_score == current.retention_score
                and entry.condition_id < current.condition_id
            ):
                weakest = index
        if best > entries[weakest].retention_score:
            entries.pop(weakest)
            entries.append(candidate)

    return sorted(entries, key=lambda entry: entry.condition_id)
