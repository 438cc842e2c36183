"""This module normalises rewards within a group into advantages."""

from typing import Tuple

import numpy as np
from numpy.typing import ArrayLike, NDArray

DEFAULT_STD_FLOOR = 1e-6


class GroupSizeError(ValueError):
    """Error raised when a group has fewer than two members."""

    def __init__(self, size: int) -> None:
        self.message = f"A group needs at least two members. Received: {size}"
        super().__init__(self.message)


def compute_advantages(
    rewards: ArrayLike, std_floor: float = DEFAULT_STD_FLOOR
) -> Tuple[NDArray[np.float64], bool]:
    """Group-relative advantages (R_i - mean) / std with the population std.

    Parameters
    ----------
    rewards : ArrayLike
        Rewards of the G members of one group.
    std_floor : float, optional
        Groups whose reward std is below this are degenerate, by default 1e-6.

    Returns
    -------
    Tuple[NDArray[np.float64], bool]
        The advantages, all exactly zero for a degenerate group, and whether the
        group is degenerate.

    Raises
    ------
    GroupSizeError
        If there are fewer than two rewards.
    ValueError
        If a reward is non-finite or std_floor is not positive.
    """
    values = np.asarray(rewards, dtype=np.float64).reshape(-1)
    if values.size < 2:
        raise GroupSizeError(values.size)
    if not np.all(np.isfinite(values)):
        raise ValueError(f"Rewards must be finite. Received: {values}")
    if not std_floor > 0:
        raise ValueError(f"std_floor must be positive. Received: {std_floor}")
    std = float(values.std())
    if std < std_floor:
        return np.zeros_like(values), True
    return (values - values.mean()) / std, False
