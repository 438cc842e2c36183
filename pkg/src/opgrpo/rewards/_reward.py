"""This module provides the analytic toy rewards that score final samples."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence, Tuple

import numpy as np
from numpy.typing import ArrayLike, NDArray

from opgrpo.flow import Condition
from opgrpo.utilities import OptionEnum


class RewardKind(OptionEnum):
    """An enum detailing the available reward functions.

    Options are:
        mode_proximity - Gaussian kernel around the condition's own mode centre\n
        multi_mode_coverage - kernel around the nearest of all mode centres\n
        ring_distance - kernel around a ring of fixed radius about the origin
    """

    MODE_PROXIMITY = "mode_proximity"
    MULTI_MODE_COVERAGE = "multi_mode_coverage"
    RING_DISTANCE = "ring_distance"


class RewardDimensionError(ValueError):
    """Error raised when a sample dimension does not match the reward's mode centres."""

    def __init__(self, received: int, expected: int) -> None:
        self.message = (
            f"Sample dimension {received} does not match reward dimension {expected}."
        )
        super().__init__(self.message)


def default_centers(
    num_modes: int = 8, radius: float = 1.5
) -> Tuple[Tuple[float, float], ...]:
    """Mode centres spaced evenly on a circle, the first on the positive x-axis."""
    angles = 2.0 * np.pi * np.arange(num_modes) / num_modes
    return tuple(
        (float(radius * np.cos(a)), float(radius * np.sin(a))) for a in angles
    )


@dataclass(frozen=True)
class RewardSpec:
    """Configuration of the reward.

    Parameters
    ----------
    kind : RewardKind, optional
        Reward function, by default mode_proximity.
    centers : Tuple[Tuple[float, ...], ...], optional
        Mode centres; condition id c targets `centers[c % len(centers)]`. By default
        eight points evenly spaced on a circle of radius 1.5.
    bandwidth : float, optional
        Kernel width, by default 0.75. Tight bandwidths give near-zero rewards.
    radius : float, optional
        Ring radius for ring_distance, by default 1.0.

    Raises
    ------
    ValueError
        If there are no centres, centres differ in dimension, or bandwidth or radius
        is not positive.
    """

    kind: RewardKind = RewardKind.MODE_PROXIMITY
    centers: Tuple[Tuple[float, ...], ...] = field(default_factory=default_centers)
    bandwidth: float = 0.75
    radius: float = 1.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", RewardKind.parse(self.kind))
        centers = tuple(tuple(float(x) for x in center) for center in self.centers)
        if not centers:
            raise ValueError("At least one mode centre is required.")
        if len({len(center) for center in centers}) != 1:
            raise ValueError(
                f"All mode centres must share one dimension. Received: {centers}"
            )
        object.__setattr__(self, "centers", centers)
        if not self.bandwidth > 0:
            raise ValueError(f"bandwidth must be positive. Received: {self.bandwidth}")
        if not self.radius > 0:
            raise ValueError(f"radius must be positive. Received: {self.radius}")

    @property
    def dim(self) -> int:
        """Dimension of the samples this reward accepts."""
        return len(self.centers[0])

    def center(self, condition: Condition) -> NDArray[np.float64]:
        """Mode centre targeted by a condition."""
        return np.array(self.centers[condition.id % len(self.centers)])

    def to_dict(self) -> dict:
        """Plain-dict form used in config files and checkpoint headers."""
        return {
            "kind": str(self.kind),
            "centers": [list(center) for center in self.centers],
            "bandwidth": float(self.bandwidth),
            "radius": float(self.radius),
        }


def _kernel(
    squared_distance: NDArray[np.float64], bandwidth: float
) -> NDArray[np.float64]:
    return np.exp(-squared_distance / bandwidth**2)


def reward_batch(
    samples: ArrayLike, condition_ids: Sequence[int], spec: RewardSpec
) -> NDArray[np.float64]:
    """Reward of each row of a batch of final samples.

    Parameters
    ----------
    samples : ArrayLike
        Final latents z_0 of shape (N, D).
    condition_ids : Sequence[int]
        One condition id per row.
    spec : RewardSpec
        Which reward to evaluate.

    Returns
    -------
    NDArray[np.float64]
        Rewards in [0, 1], shape (N,).

    Raises
    ------
    RewardDimensionError
        If D does not match the reward dimension.
    """
    points = np.asarray(samples, dtype=np.float64)
    if points.ndim != 2 or points.shape[1] != spec.dim:
        raise RewardDimensionError(points.shape[-1] if points.ndim else 0, spec.dim)
    centers = np.asarray(spec.centers)

    if spec.kind is RewardKind.MODE_PROXIMITY:
        ids = np.asarray(condition_ids, dtype=np.int64) % len(spec.centers)
        values = _kernel(np.sum((points - centers[ids]) ** 2, axis=1), spec.bandwidth)
    elif spec.kind is RewardKind.MULTI_MODE_COVERAGE:
        distances = np.sum((points[:, np.newaxis, :] - centers) ** 2, axis=2)
        values = _kernel(distances, spec.bandwidth).max(axis=1)
    else:
        norms = np.sqrt(np.sum(points**2, axis=1))
        values = _kernel((norms - spec.radius) ** 2, spec.bandwidth)
    return np.clip(values, 0.0, 1.0)


def reward(sample: ArrayLike, condition: Condition, spec: RewardSpec) -> float:
    """Reward of a single final sample z_0 under a condition, in [0, 1].

    Raises
    ------
    RewardDimensionError
        If the sample dimension does not match the reward centers.
    """
    point = np.asarray(sample, dtype=np.float64)
    if point.ndim != 1:
        raise RewardDimensionError(point.size, spec.dim)
    return float(reward_batch(point[np.newaxis], [condition.id], spec)[0])
