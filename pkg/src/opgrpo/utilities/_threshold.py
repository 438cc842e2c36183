"""This module provides a class for detecting when a training curve crosses a reward
threshold."""

from typing import List, Optional

import numpy as np
from numpy.typing import NDArray


class ThresholdHeuristic:
    """This class implements the trailing-window heuristic used to compare how quickly
    runs reach a given reward level.

    The reward curve is smoothed with a trailing mean over `window` iterations. The
    iterations-to-threshold of a curve is the first iteration whose full trailing
    window mean exceeds the threshold; the final performance of a curve is the
    trailing mean over its last window.

    Parameters
    ----------
    rewards : NDArray | List[float]
        Mean reward per iteration, the first entry being iteration 1.
    window : int, optional
        Length of the trailing window, by default 10.

    Raises
    ------
    ValueError
        If the window is not a positive integer.
    ValueError
        If the curve is shorter than one window.
    """

    def __init__(self, rewards: NDArray | List[float], window: int = 10) -> None:
        if window <= 0 or not isinstance(window, int):
            raise ValueError(
                f"Window needs to be a positive, non-zero integer. Received: {window}"
            )
        self.rewards = np.asarray(rewards, dtype=np.float64)
        self.window = window
        if len(self.rewards) < self.window:
            raise ValueError(
                f"A reward curve of {len(self.rewards)} iterations is shorter than the "
                f"trailing window of {self.window} iterations."
            )

    def trailing_means(self) -> NDArray:
        """Trailing means of every full window. Entry i covers iterations
        i + 1 .. i + window.

        Returns
        -------
        NDArray
        """
        kernel = np.full(self.window, 1.0 / self.window)
        return np.convolve(self.rewards, kernel, mode="valid")

    def final_trailing_mean(self) -> float:
        """Mean reward over the last window of the curve."""
        return float(np.mean(self.rewards[-self.window :]))

    def iterations_to_threshold(self, threshold: float) -> Optional[int]:
        """Return the first iteration whose trailing mean exceeds the threshold.

        Parameters
        ----------
        threshold : float
            Reward level to reach.

        Returns
        -------
        Optional[int]
            The iteration number (1-based), or None if the curve never gets there.
        """
        crossings = np.flatnonzero(self.trailing_means() > threshold)
        if crossings.size == 0:
            return None
        return int(crossings[0]) + self.window

    @staticmethod
    def speedup(iterations: Optional[int], baseline_iterations: Optional[int]) -> float:
        """Fractional saving in iterations relative to a baseline,
        1 - iterations / baseline_iterations. NaN when either curve never reaches
        the threshold.

        Parameters
        ----------
        iterations : Optional[int]
            Iterations-to-threshold of the candidate.
        baseline_iterations : Optional[int]
            Iterations-to-threshold of the baseline.

        Returns
        -------
        float
        """
        if iterations is None or baseline_iterations is None:
            return float("nan")
        return 1.0 - iterations / baseline_iterations
