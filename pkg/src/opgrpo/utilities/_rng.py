"""This module provides keyed random number streams, so that every random draw in an
iteration is reproducible regardless of the order in which it is made."""

from enum import IntEnum

import numpy as np


class ControlStream(IntEnum):
    """An enum naming the trainer-level random streams of an iteration.

    Options:
        - CONDITIONS = 0: task conditions drawn for each group slot.
        - BUFFER_FLAGS = 1: Bernoulli draws deciding which slots reuse the buffer.
        - BUFFER_PICK = 2: which buffered conditions fill the flagged slots.
        - SHUFFLE = 3: permutation of the members of a group.
    """

    CONDITIONS = 0
    BUFFER_FLAGS = 1
    BUFFER_PICK = 2
    SHUFFLE = 3


_MEMBER_TAG = 16


class RngStreams:
    """Factory of independent `numpy.random.Generator` streams for one iteration.

    Streams are derived from a `SeedSequence` keyed on the run seed, the iteration and
    the purpose of the draw. Member streams are keyed on (group slot, condition id,
    member index), so rolling out members in any order, or concurrently, gives the
    same trajectories. Nothing needs to be stored to resume a run except the seed and
    the iteration.

    Parameters
    ----------
    seed : int
        Run seed, must be non-negative.
    iteration : int
        Iteration the streams belong to, must be non-negative.
    """

    def __init__(self, seed: int, iteration: int) -> None:
        if seed < 0 or iteration < 0:
            raise ValueError(
                "Seed and iteration must be non-negative integers. "
                f"Received: seed={seed}, iteration={iteration}"
            )
        self.seed = int(seed)
        self.iteration = int(iteration)

    def _generator(self, *keys: int) -> np.random.Generator:
        return np.random.default_rng(
            np.random.SeedSequence([self.seed, self.iteration, *map(int, keys)])
        )

    def control(self, purpose: ControlStream, *keys: int) -> np.random.Generator:
        """Return the trainer-level stream for the given purpose.

        Parameters
        ----------
        purpose : ControlStream
            What the stream is used for.
        *keys : int
            Extra non-negative keys, e.g. the group slot for a shuffle.

        Returns
        -------
        np.random.Generator
        """
        return self._generator(int(purpose), *keys)

    def member(
        self, group_slot: int, condition_id: int, member_index: int
    ) -> np.random.Generator:
        """Return the stream that drives one group member's noise.

        Parameters
        ----------
        group_slot : int
            Position of the group within the iteration.
        condition_id : int
            Condition of the group.
        member_index : int
            Index of the member within its group.

        Returns
        -------
        np.random.Generator
        """
        return self._generator(_MEMBER_TAG, group_slot, condition_id, member_index)
