"""This module checks that importance-weighted reuse of off-policy samples is unbiased
on a one-step Gaussian problem with a known answer."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from opgrpo.diagnostics._gaussian import gaussian_logpdf_terms
from opgrpo.flow import (
    Condition,
    FieldArchitecture,
    NoiseSchedule,
    Origin,
    Trajectory,
    VelocityField,
)
from opgrpo.objective import correction_weight

# One step from z_1 = 0 with unit variance: sigma_1 - sigma_0 = 1 and sigma_0 = 1.
_SCHEDULE = NoiseSchedule(num_steps=1, sigma_max=2.0, sigma_min=1.0)
_ARCHITECTURE = FieldArchitecture(
    latent_dim=1,
    num_conditions=1,
    hidden_sizes=(1, 1),
    time_embedding_dim=1,
    condition_embedding_dim=1,
)


@dataclass(frozen=True)
class UnbiasednessReport:
    """Outcome of `is_unbiasedness_check`.

    Attributes
    ----------
    num_samples : int
    analytic_mean : float
        P(x > 0) under the current policy, from the normal survival function.
    on_policy_mean : float
        Monte-Carlo mean of g over samples of the current policy.
    weighted_mean : float
        Monte-Carlo mean of w g over samples of the older policy.
    standard_error : float
        Combined standard error of the two estimates.
    max_weight_error : float
        Largest log-space difference between the library's correction weights and
        the directly computed density ratios.
    weights_checked : int
        Number of samples the pointwise comparison covered.
    """

    num_samples: int
    analytic_mean: float
    on_policy_mean: float
    weighted_mean: float
    standard_error: float
    max_weight_error: float
    weights_checked: int

    @property
    def difference(self) -> float:
        """Absolute gap between the two Monte-Carlo estimates."""
        return abs(self.on_policy_mean - self.weighted_mean)

    @property
    def within_bound(self) -> bool:
        """Whether the gap is below three combined standard errors."""
        return self.difference < 3.0 * self.standard_error

    @property
    def weights_match(self) -> bool:
        """Whether the pointwise weight comparison agrees within 1e-9."""
        return self.max_weight_error <= 1e-9

    @property
    def passed(self) -> bool:
        """Both checks hold."""
        return self.within_bound and self.weights_match


def is_unbiasedness_check(
    num_samples: int = 1_000_000,
    seed: int = 0,
    current_mean: float = 0.0,
    previous_mean: float = 0.5,
    weights_checked: int = 256,
) -> UnbiasednessReport:
    """Compare E_old[g] with E_off[w g], w = p_old / p_off, for g(x) = 1[x > 0].

    The current policy p_old is N(current_mean, 1) and the older policy p_off is
    N(previous_mean, 1); both are one step of a constant velocity field from z = 0.
    The density ratio is computed directly, then compared pointwise against
    `correction_weight` applied to replayed one-step trajectories.

    Parameters
    ----------
    num_samples : int, optional
        Samples per estimate, by default 10^6.
    seed : int, optional
        Seed of the sample streams, by default 0.
    current_mean, previous_mean : float, optional
        Means of the two policies, by default 0 and 0.5.
    weights_checked : int, optional
        How many of the older policy's samples go through `correction_weight`.
    """
    if num_samples < 2:
        raise ValueError(f"num_samples must be at least 2. Received: {num_samples}")
    on_rng, off_rng = (
        np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(2)
    )
    on_samples = current_mean + on_rng.standard_normal(num_samples)
    off_samples = previous_mean + off_rng.standard_normal(num_samples)

    on_values = (on_samples > 0).astype(np.float64)
    off_logpdf = gaussian_logpdf_terms(off_samples, previous_mean, 1.0)
    log_weights = gaussian_logpdf_terms(off_samples, current_mean, 1.0) - off_logpdf
    weighted = np.exp(log_weights) * (off_samples > 0)

    standard_error = math.sqrt(
        (on_values.var(ddof=1) + weighted.var(ddof=1)) / num_samples
    )

    vf_old = VelocityField.constant(_ARCHITECTURE, 1, [current_mean])
    condition = Condition.one_hot(0, 1)
    checked = min(weights_checked, num_samples)
    worst = 0.0
    for index in range(checked):
        replay = Trajectory(
            condition=condition,
            latents=[[0.0], [off_samples[index]]],
            step_logprobs=[off_logpdf[index]],
            reward=float(off_samples[index] > 0),
            origin=Origin.BUFFER,
        )
        weight = correction_weight(replay, vf_old, _SCHEDULE)
        worst = max(worst, abs(weight.log_value - float(log_weights[index])))

    return UnbiasednessReport(
        num_samples=num_samples,
        analytic_mean=float(norm.sf(0.0, loc=current_mean, scale=1.0)),
        on_policy_mean=float(on_values.mean()),
        weighted_mean=float(weighted.mean()),
        standard_error=standard_error,
        max_weight_error=worst,
        weights_checked=checked,
    )
