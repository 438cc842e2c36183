"""This module defines the noise schedule that discretises the stochastic sampler."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray


class NonPositiveVarianceError(ValueError):
    """Error raised when a stochastic step would have a non-positive transition variance.

    Parameters
    ----------
    step : int
        The step index t of the offending transition z_t -> z_{t-1}.
    variance : float
        The computed variance.
    """

    def __init__(self, step: int, variance: float) -> None:
        self.step = step
        self.variance = variance
        self.message = (
            f"Transition variance at step {step} must be positive. Received: {variance}"
        )
        super().__init__(self.message)


@dataclass(frozen=True)
class NoiseSchedule:
    """Linear grid of noise levels, with sigma_T = sigma_max and sigma_0 = sigma_min.

    Step t moves z_t to z_{t-1} for t = T..1. With sigma_prev = sigma_t and
    sigma = sigma_{t-1}, the transition is Gaussian with mean
    z + v * (sigma_prev - sigma) and variance sigma^2 * (sigma_prev - sigma). Every step
    is stochastic; the final one is the sharpest.

    Parameters
    ----------
    num_steps : int, optional
        Number of steps T, by default 10.
    sigma_max : float, optional
        Noise level at t = T, by default 1.0.
    sigma_min : float, optional
        Noise level at t = 0, by default 0.01. Must be positive so that the last step
        has a positive variance.

    Raises
    ------
    ValueError
        If num_steps is not a positive integer or the levels are not strictly
        decreasing and positive.
    """

    num_steps: int = 10
    sigma_max: float = 1.0
    sigma_min: float = 0.01
    sigmas: NDArray[np.float64] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if isinstance(self.num_steps, bool) or int(self.num_steps) != self.num_steps:
            raise ValueError(
                f"num_steps must be an integer. Received: {self.num_steps}"
            )
        if self.num_steps < 1:
            raise ValueError(f"num_steps must be positive. Received: {self.num_steps}")
        if not 0.0 < self.sigma_min < self.sigma_max:
            raise ValueError(
                "Noise levels must satisfy 0 < sigma_min < sigma_max. "
                f"Received: sigma_min={self.sigma_min}, sigma_max={self.sigma_max}"
            )
        sigmas = np.linspace(self.sigma_min, self.sigma_max, self.num_steps + 1)
        sigmas.setflags(write=False)
        object.__setattr__(self, "sigmas", sigmas)

    def _check_step(self, step: int) -> None:
        if not 1 <= step <= self.num_steps:
            raise IndexError(
                f"Step index must lie in [1, {self.num_steps}]. Received: {step}"
            )

    def sigma(self, index: int) -> float:
        """Noise level sigma_index for index in 0..T."""
        return float(self.sigmas[index])

    def delta(self, step: int) -> float:
        """Noise decrement sigma_t - sigma_{t-1} of step t, also the Euler step size."""
        self._check_step(step)
        return float(self.sigmas[step] - self.sigmas[step - 1])

    def step_variance(self, step: int) -> float:
        """Transition variance sigma_{t-1}^2 * (sigma_t - sigma_{t-1}) of step t.

        Raises
        ------
        NonPositiveVarianceError
            If the variance is not strictly positive.
        """
        variance = float(self.sigmas[step - 1] ** 2 * self.delta(step))
        if not variance > 0.0:
            raise NonPositiveVarianceError(step, variance)
        return variance

    def step_std(self, step: int) -> float:
        """Transition standard deviation of step t."""
        return math.sqrt(self.step_variance(step))

    def to_dict(self) -> dict:
        """Plain-dict form used in config files and checkpoint headers."""
        return {
            "num_steps": int(self.num_steps),
            "sigma_max": float(self.sigma_max),
            "sigma_min": float(self.sigma_min),
        }
