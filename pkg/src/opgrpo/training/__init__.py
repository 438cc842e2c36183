"""The training package holds the trainer configuration, the Adam optimiser, the
per-iteration metrics log, checkpointing of complete trainer state, and the training
loop that ties rollouts, buffer maintenance and surrogate updates together."""

from opgrpo.training._adam import AdamState, NonFiniteGradientError, adam_step
from opgrpo.training._checkpoint import (
    CheckpointError,
    TrainerState,
    checkpoint_roundtrip,
    load_checkpoint,
    save_checkpoint,
)
from opgrpo.training._config import (
    ConfigError,
    TrainerConfig,
    TrainingMode,
    apply_overrides,
    config_hash,
    load_config,
    parse_override_value,
)
from opgrpo.training._metrics import (
    BASE_COLUMNS,
    IterationMetrics,
    MetricsLog,
    metric_columns,
    read_metrics,
)
from opgrpo.training._trainer import (
    RolloutLeakError,
    Trainer,
    TrainingDivergedError,
    TrainingResult,
    train,
)
