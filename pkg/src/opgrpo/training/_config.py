"""This module defines the trainer configuration and reads it from TOML files."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import tomllib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Mapping, Optional

from opgrpo.flow import FieldArchitecture, NoiseSchedule
from opgrpo.objective import ObjectiveMode
from opgrpo.rewards import RewardSpec
from opgrpo.utilities import OptionEnum


class ConfigError(ValueError):
    """Error raised for an invalid configuration value, naming the offending field.

    Parameters
    ----------
    field_name : str
        Dotted name of the field, e.g. "schedule.num_steps".
    message : str
        What is wrong with it.
    """

    def __init__(self, field_name: str, message: str) -> None:
        self.field_name = field_name
        self.message = f"Invalid config field `{field_name}`: {message}"
        super().__init__(self.message)


class TrainingMode(OptionEnum):
    """An enum detailing the training variants.

    Options are:
        sequence_corrected - reuse buffer trajectories with the sequence-level
            correction weight\n
        naive_substitution - reuse buffer trajectories with the buffer policy in the
            per-step ratio\n
        uncorrected - reuse buffer trajectories without any correction\n
        on_policy_baseline - never reuse, plain group-relative policy optimisation
    """

    SEQUENCE_CORRECTED = "sequence_corrected"
    NAIVE_SUBSTITUTION = "naive_substitution"
    UNCORRECTED = "uncorrected"
    ON_POLICY_BASELINE = "on_policy_baseline"


_SECTIONS = {
    "architecture": FieldArchitecture,
    "schedule": NoiseSchedule,
    "reward": RewardSpec,
}


def _is_int(value: Any) -> bool:
    return isinstance(value, int) and not isinstance(value, bool)


@dataclass(frozen=True)
class TrainerConfig:
    """Every setting of a training run. All fields have desk-scale defaults.

    Parameters
    ----------
    group_size : int
        Members per group G, at least 2.
    groups_per_iteration : int
        Groups rolled out per iteration.
    off_policy_fraction : float
        Probability in [0, 1] that a group reuses a buffer trajectory.
    clip_epsilon : float
        Clip range of the per-step ratio, in (0, 1).
    truncation_step : Optional[int]
        t_off; buffer steps T..t_off are reused and the rest regenerated. None means
        ceil(0.2 T).
    buffer_capacity : Optional[int]
        Replay buffer capacity. None means the number of conditions.
    decay_rate : float
        Retention decay gamma per iteration, in (0, 1].
    learning_rate, adam_beta1, adam_beta2, adam_eps : float
        Optimiser settings.
    total_iterations : int
        Iterations to train for.
    seed : int
        Seed of initialisation and every random stream.
    mode : TrainingMode
        Training variant.
    inner_epochs : int
        Optimiser updates per rollout.
    checkpoint_every : int
        Iterations between checkpoints, 0 to only write the final one.
    std_floor : float
        Reward std below which a group is degenerate.
    log_weight_min, log_weight_max : float
        Bounds of the log correction weight.
    kl_beta : float
        Weight of the KL penalty towards the initial policy, 0 to disable.
    log_every : int
        Iterations between progress log lines.
    architecture : FieldArchitecture
    schedule : NoiseSchedule
    reward : RewardSpec

    Raises
    ------
    ConfigError
        If a field is out of range, or the reward and latent dimensions disagree.
    """

    group_size: int = 8
    groups_per_iteration: int = 16
    off_policy_fraction: float = 0.15
    clip_epsilon: float = 0.2
    truncation_step: Optional[int] = None
    buffer_capacity: Optional[int] = None
    decay_rate: float = 0.98
    learning_rate: float = 3e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    total_iterations: int = 600
    seed: int = 0
    mode: TrainingMode = TrainingMode.SEQUENCE_CORRECTED
    inner_epochs: int = 1
    checkpoint_every: int = 50
    std_floor: float = 1e-6
    log_weight_min: float = -5.0
    log_weight_max: float = 5.0
    kl_beta: float = 0.0
    log_every: int = 10
    architecture: FieldArchitecture = field(default_factory=FieldArchitecture)
    schedule: NoiseSchedule = field(default_factory=NoiseSchedule)
    reward: RewardSpec = field(default_factory=RewardSpec)

    def __post_init__(self) -> None:
        try:
            object.__setattr__(self, "mode", TrainingMode.parse(self.mode))
        except ValueError as error:
            raise ConfigError("mode", str(error)) from error
        self._check_int("group_size", minimum=2)
        self._check_int("groups_per_iteration", minimum=1)
        self._check_int("total_iterations", minimum=0)
        self._check_int("seed", minimum=0)
        self._check_int("inner_epochs", minimum=1)
        self._check_int("checkpoint_every", minimum=0)
        self._check_int("log_every", minimum=1)
        if self.buffer_capacity is not None:
            self._check_int("buffer_capacity", minimum=1)
        if self.truncation_step is not None:
            self._check_int("truncation_step", minimum=0)
            if self.truncation_step > self.schedule.num_steps:
                raise ConfigError(
                    "truncation_step",
                    f"must lie in [0, {self.schedule.num_steps}]. "
                    f"Received: {self.truncation_step}",
                )
        self._check_range("off_policy_fraction", 0.0, 1.0)
        self._check_range("decay_rate", 0.0, 1.0, low_inclusive=False)
        self._check_range("adam_beta1", 0.0, 1.0, high_inclusive=False)
        self._check_range("adam_beta2", 0.0, 1.0, high_inclusive=False)
        self._check_range("clip_epsilon", 0.0, 1.0, False, False)
        for name in ("learning_rate", "adam_eps", "std_floor"):
            self._check_range(name, 0.0, math.inf, low_inclusive=False)
        self._check_range("kl_beta", 0.0, math.inf)
        if not self.log_weight_min <= 0.0 <= self.log_weight_max:
            raise ConfigError(
                "log_weight_min",
                "log weight bounds must bracket 0. "
                f"Received: [{self.log_weight_min}, {self.log_weight_max}]",
            )
        if self.reward.dim != self.architecture.latent_dim:
            raise ConfigError(
                "reward.centers",
                f"centres have dimension {self.reward.dim} but the latent dimension "
                f"is {self.architecture.latent_dim}.",
            )

    def _check_int(self, name: str, minimum: int) -> None:
        value = getattr(self, name)
        if not _is_int(value) or value < minimum:
            raise ConfigError(
                name, f"must be an integer >= {minimum}. Received: {value!r}"
            )

    def _check_range(
        self,
        name: str,
        low: float,
        high: float,
        low_inclusive: bool = True,
        high_inclusive: bool = True,
    ) -> None:
        value = getattr(self, name)
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(name, f"must be a number. Received: {value!r}")
        above = value >= low if low_inclusive else value > low
        below = value <= high if high_inclusive else value < high
        if not (above and below and math.isfinite(value)):
            interval = (
                f"{'[' if low_inclusive else '('}{low}, {high}"
                f"{']' if high_inclusive else ')'}"
            )
            raise ConfigError(name, f"must lie in {interval}. Received: {value!r}")

    @property
    def resolved_truncation_step(self) -> int:
        """t_off, defaulting to ceil(0.2 T)."""
        if self.truncation_step is not None:
            return self.truncation_step
        return math.ceil(0.2 * self.schedule.num_steps)

    @property
    def resolved_capacity(self) -> int:
        """Buffer capacity, defaulting to the number of conditions."""
        if self.buffer_capacity is not None:
            return self.buffer_capacity
        return self.architecture.num_conditions

    @property
    def effective_fraction(self) -> float:
        """Off-policy fraction actually used; the baseline never reuses."""
        if self.mode is TrainingMode.ON_POLICY_BASELINE:
            return 0.0
        return float(self.off_policy_fraction)

    @property
    def objective_mode(self) -> Optional[ObjectiveMode]:
        """Surrogate variant, None for the plain on-policy baseline."""
        if self.mode is TrainingMode.ON_POLICY_BASELINE:
            return None
        return ObjectiveMode.parse(str(self.mode))

    @property
    def log_weight_bounds(self) -> tuple[float, float]:
        """Bounds on the log correction weight."""
        return (float(self.log_weight_min), float(self.log_weight_max))

    def to_dict(self) -> Dict[str, Any]:
        """Nested plain-dict form; round-trips through `from_mapping`."""
        data: Dict[str, Any] = {}
        for item in dataclasses.fields(self):
            if item.name in _SECTIONS:
                continue
            value = getattr(self, item.name)
            data[item.name] = str(value) if isinstance(value, OptionEnum) else value
        data["architecture"] = self.architecture.to_dict()
        data["schedule"] = self.schedule.to_dict()
        data["reward"] = self.reward.to_dict()
        return data

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any]) -> "TrainerConfig":
        """Build a config from nested plain data, e.g. a parsed TOML document.

        Raises
        ------
        ConfigError
            If a key is unknown or a value is invalid.
        """
        scalar_names = {f.name for f in dataclasses.fields(cls)} - set(_SECTIONS)
        kwargs: Dict[str, Any] = {}
        for key, value in data.items():
            if key in _SECTIONS:
                if not isinstance(value, Mapping):
                    raise ConfigError(key, "must be a table.")
                kwargs[key] = _build_section(key, value)
            elif key in scalar_names:
                kwargs[key] = value
            else:
                raise ConfigError(key, "unknown config key.")
        return cls(**kwargs)


def _build_section(name: str, values: Mapping[str, Any]) -> Any:
    section = _SECTIONS[name]
    known = {f.name for f in dataclasses.fields(section) if f.init}
    for key in values:
        if key not in known:
            raise ConfigError(f"{name}.{key}", "unknown config key.")
    try:
        return section(**values)
    except (TypeError, ValueError) as error:
        raise ConfigError(name, str(error)) from error


def config_hash(config: TrainerConfig) -> str:
    """SHA-256 of the canonical sorted-key JSON of the resolved config."""
    canonical = json.dumps(config.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()


def load_config(path: Optional[str | Path] = None) -> TrainerConfig:
    """Read a TOML config file; no path gives the default config.

    Raises
    ------
    ConfigError
        If the file is missing or unparsable, or holds an invalid value.
    """
    if path is None:
        return TrainerConfig()
    file_path = Path(path)
    if not file_path.is_file():
        raise ConfigError("config", f"config file not found: {file_path}")
    try:
        with file_path.open("rb") as handle:
            data = tomllib.load(handle)
    except tomllib.TOMLDecodeError as error:
        raise ConfigError("config", f"cannot parse {file_path}: {error}") from error
    return TrainerConfig.from_mapping(data)


def parse_override_value(raw: str) -> Any:
    """Interpret a command-line value as a TOML value, falling back to a string."""
    try:
        return tomllib.loads(f"value = {raw}")["value"]
    except tomllib.TOMLDecodeError:
        return raw


def apply_overrides(
    config: TrainerConfig, overrides: Mapping[str, Any]
) -> TrainerConfig:
    """Return a copy of the config with dotted keys replaced, e.g.
    {"schedule.num_steps": 4, "seed": 3}.

    Raises
    ------
    ConfigError
        If a key is unknown or a value is invalid.
    """
    data = config.to_dict()
    for dotted, value in overrides.items():
        parts = dotted.split(".")
        if len(parts) == 1:
            if parts[0] in _SECTIONS:
                raise ConfigError(dotted, "a whole section cannot be overridden.")
            data[parts[0]] = value
        elif len(parts) == 2 and parts[0] in _SECTIONS:
            data[parts[0]][parts[1]] = value
        else:
            raise ConfigError(dotted, "unknown config key.")
    return TrainerConfig.from_mapping(data)
