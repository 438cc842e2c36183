"""Buffer package. The replay buffer keeping the best recent trajectory per condition,
with decayed retention scores deciding what gets replaced."""

from opgrpo.buffer._replay_buffer import (
    BufferEntry,
    MissingConditionError,
    MixedConditionError,
    ReplayBuffer,
    SampleSizeError,
)
