"""This module evaluates Gaussian log-densities from first principles."""

from __future__ import annotations

import math

import numpy as np
from numpy.typing import ArrayLike, NDArray

_HALF_LOG_TWO_PI = 0.5 * math.log(2.0 * math.pi)


def gaussian_logpdf_terms(
    x: ArrayLike, mean: ArrayLike, std: ArrayLike
) -> NDArray[np.float64]:
    """Elementwise log N(x; mean, std^2).

    Raises
    ------
    ValueError
        If any standard deviation is not positive.
    """
    x = np.asarray(x, dtype=np.float64)
    mean = np.asarray(mean, dtype=np.float64)
    std = np.asarray(std, dtype=np.float64)
    if np.any(std <= 0):
        raise ValueError(f"Standard deviation must be positive. Received: {std}")
    standardised = (x - mean) / std
    return -0.5 * standardised * standardised - np.log(std) - _HALF_LOG_TWO_PI


def reference_gaussian_logpdf(x: ArrayLike, mean: ArrayLike, std: ArrayLike) -> float:
    """Log-density of x under independent Gaussians, summed over all coordinates.

    Parameters
    ----------
    x : ArrayLike
    mean : ArrayLike
    std : ArrayLike
        Standard deviations, all positive.

    Returns
    -------
    float

    Raises
    ------
    ValueError
        If any standard deviation is not positive.
    """
    return float(np.sum(gaussian_logpdf_terms(x, mean, std)))
