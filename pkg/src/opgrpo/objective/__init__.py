"""Objective package. The clipped group-relative surrogate, the sequence-level
importance correction for reused buffer steps, and clip-fraction accounting."""

from opgrpo.objective._clip_stats import (
    ClipStats,
    EmptySelectionError,
    StepFilter,
    clip_fraction,
)
from opgrpo.objective._correction import (
    DEFAULT_LOG_WEIGHT_BOUNDS,
    ON_POLICY_WEIGHT,
    CorrectionWeight,
    MissingOffPolicyRecordError,
    correction_weight,
    off_policy_mask,
)
from opgrpo.objective._surrogate import (
    RATIO_LOG_CLAMP,
    ObjectiveMode,
    StepRatioRecord,
    batch_surrogate_loss,
    clipped_flags,
    kl_penalty,
    on_policy_grpo_loss,
    step_ratios,
    surrogate_loss,
)
