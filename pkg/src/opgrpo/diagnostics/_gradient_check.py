"""This module estimates gradients by central finite differences."""

from __future__ import annotations

from typing import Callable, Dict, Mapping

import numpy as np
from numpy.typing import NDArray

ParamDict = Dict[str, NDArray[np.float64]]


def finite_difference_gradient(
    function: Callable[[Mapping[str, NDArray[np.float64]]], float],
    params: Mapping[str, NDArray[np.float64]],
    step: float = 1e-5,
) -> ParamDict:
    """Central-difference gradient (f(p + h) - f(p - h)) / 2h of a scalar function of
    named parameter arrays, one coordinate at a time.

    Parameters
    ----------
    function : Callable
        Maps a dict of parameter arrays to a float. It must not keep references to the
        arrays it is passed.
    params : Mapping[str, NDArray[np.float64]]
        Point to differentiate at; not modified.
    step : float, optional
        Perturbation h, by default 1e-5.
    """
    if step <= 0:
        raise ValueError(f"Finite-difference step must be positive. Received: {step}")
    point = {name: np.array(values, dtype=np.float64) for name, values in params.items()}
    gradient: ParamDict = {}
    for name, values in point.items():
        estimate = np.zeros_like(values)
        for index in np.ndindex(values.shape):
            original = values[index]
            values[index] = original + step
            upper = function(point)
            values[index] = original - step
            lower = function(point)
            values[index] = original
            estimate[index] = (upper - lower) / (2.0 * step)
        gradient[name] = estimate
    return gradient


def max_relative_error(
    analytic: Mapping[str, NDArray[np.float64]],
    numeric: Mapping[str, NDArray[np.float64]],
    floor: float = 1e-8,
) -> float:
    """Largest |a - n| / max(|a|, |n|, floor) over every coordinate of every parameter.

    Raises
    ------
    ValueError
        If the two gradients name different parameters or shapes.
    """
    if set(analytic) != set(numeric):
        raise ValueError("Gradients must cover the same parameters.")
    worst = 0.0
    for name, values in analytic.items():
        a = np.asarray(values, dtype=np.float64)
        n = np.asarray(numeric[name], dtype=np.float64)
        if a.shape != n.shape:
            raise ValueError(f"Gradient shapes of {name} differ: {a.shape}, {n.shape}")
        scale = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        if a.size:
            worst = max(worst, float(np.max(np.abs(a - n) / scale)))
    return worst
