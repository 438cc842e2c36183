"""The diagnostics package holds independent reference implementations used to check
the library: a naive replay of the buffer retention rules, a first-principles
Gaussian log-density, a finite-difference gradient estimator, and a Monte-Carlo check
that importance-weighted reuse of older samples is unbiased."""

from opgrpo.diagnostics._buffer_reference import (
    BufferEvent,
    DecayEvent,
    OfferEvent,
    ReferenceEntry,
    reference_buffer_replay,
)
from opgrpo.diagnostics._gaussian import (
    gaussian_logpdf_terms,
    reference_gaussian_logpdf,
)
from opgrpo.diagnostics._gradient_check import (
    finite_difference_gradient,
    max_relative_error,
)
from opgrpo.diagnostics._unbiasedness import UnbiasednessReport, is_unbiasedness_check
