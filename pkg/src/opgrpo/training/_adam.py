"""This module provides the Adam optimiser over named parameter arrays."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Mapping, Tuple

import numpy as np
from numpy.typing import NDArray


class NonFiniteGradientError(ArithmeticError):
    """Error raised when a gradient handed to the optimiser is NaN or infinite.

    Parameters
    ----------
    name : str
        Name of the offending parameter.
    """

    def __init__(self, name: str) -> None:
        self.name = name
        self.message = f"Gradient of parameter `{name}` holds non-finite values."
        super().__init__(self.message)


@dataclass
class AdamState:
    """Step counter and moment estimates of Adam, keyed by parameter name."""

    step: int = 0
    first_moment: Dict[str, NDArray[np.float64]] = field(default_factory=dict)
    second_moment: Dict[str, NDArray[np.float64]] = field(default_factory=dict)

    def copy(self) -> "AdamState":
        """Deep copy of the state."""
        return AdamState(
            step=self.step,
            first_moment={k: v.copy() for k, v in self.first_moment.items()},
            second_moment={k: v.copy() for k, v in self.second_moment.items()},
        )


def adam_step(
    params: Mapping[str, NDArray[np.float64]],
    grads: Mapping[str, NDArray[np.float64]],
    state: AdamState,
    learning_rate: float,
    betas: Tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
) -> Tuple[Dict[str, NDArray[np.float64]], AdamState]:
    """One bias-corrected Adam update.

    m <- b1 m + (1 - b1) g, v <- b2 v + (1 - b2) g^2 and
    p <- p - lr m_hat / (sqrt(v_hat) + eps), with m_hat = m / (1 - b1^t) and
    v_hat = v / (1 - b2^t).

    Parameters
    ----------
    params : Mapping[str, NDArray[np.float64]]
        Current parameter values.
    grads : Mapping[str, NDArray[np.float64]]
        Gradient of the loss per parameter, same names and shapes.
    state : AdamState
        State after the previous step; not modified.
    learning_rate : float
    betas : Tuple[float, float], optional
    eps : float, optional

    Returns
    -------
    Tuple[Dict[str, NDArray[np.float64]], AdamState]
        Updated parameters and the new state.

    Raises
    ------
    ValueError
        If names or shapes of parameters and gradients disagree.
    NonFiniteGradientError
        If a gradient is non-finite. Nothing is updated in that case.
    """
    if set(params) != set(grads):
        raise ValueError(
            "Parameters and gradients must share names. "
            f"Received: {sorted(params)} and {sorted(grads)}"
        )
    for name, grad in grads.items():
        if np.shape(grad) != np.shape(params[name]):
            raise ValueError(
                f"Gradient of {name} must have shape {np.shape(params[name])}. "
                f"Received: {np.shape(grad)}"
            )
        if not np.all(np.isfinite(grad)):
            raise NonFiniteGradientError(name)

    beta1, beta2 = betas
    step = state.step + 1
    new_state = AdamState(step=step)
    updated: Dict[str, NDArray[np.float64]] = {}
    for name, value in params.items():
        grad = np.asarray(grads[name], dtype=np.float64)
        first = state.first_moment.get(name, np.zeros_like(grad))
        second = state.second_moment.get(name, np.zeros_like(grad))
        first = beta1 * first + (1.0 - beta1) * grad
        second = beta2 * second + (1.0 - beta2) * grad * grad
        first_hat = first / (1.0 - beta1**step)
        second_hat = second / (1.0 - beta2**step)
        updated[name] = value - learning_rate * first_hat / (np.sqrt(second_hat) + eps)
        new_state.first_moment[name] = first
        new_state.second_moment[name] = second
    return updated, new_state
