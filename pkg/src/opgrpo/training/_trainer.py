"""This module runs the off-policy group-relative training loop."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from opgrpo.buffer import ReplayBuffer
from opgrpo.flow import ClampCounter, VelocityField, task_conditions
from opgrpo.objective import ClipStats, batch_surrogate_loss, on_policy_grpo_loss
from opgrpo.rollout import GroupBatch, GroupRequest, build_groups
from opgrpo.tensor import ComputationTape, NonFiniteError, Tensor, backward
from opgrpo.training._adam import AdamState, NonFiniteGradientError, adam_step
from opgrpo.training._checkpoint import (
    TrainerState,
    load_checkpoint,
    save_checkpoint,
)
from opgrpo.training._config import TrainerConfig, TrainingMode, config_hash
from opgrpo.training._metrics import IterationMetrics, MetricsLog, read_metrics
from opgrpo.utilities import ControlStream, RngStreams, ThresholdHeuristic

logger = logging.getLogger(__name__)


class TrainingDivergedError(RuntimeError):
    """Error raised when the loss or its gradient stops being finite.

    Parameters
    ----------
    iteration : int
        Iteration that failed.
    cause : str
        Description of the failure.
    dump : Dict[str, Any]
        JSON-serialisable dump of the offending group.
    """

    def __init__(self, iteration: int, cause: str, dump: Dict[str, Any]) -> None:
        self.iteration = iteration
        self.dump = dump
        self.message = f"Training diverged at iteration {iteration}: {cause}"
        super().__init__(self.message)


class RolloutLeakError(RuntimeError):
    """Error raised when the rollout policy changes during a rollout phase."""

    def __init__(self) -> None:
        self.message = "The frozen rollout policy was modified during the rollout phase."
        super().__init__(self.message)


class Trainer:
    """Stateful driver of the training loop.

    Every iteration freezes a snapshot of the policy, rolls out groups against it
    (some reusing truncated buffer trajectories), offers each group's best member to
    the buffer and then decays it, and applies `inner_epochs` Adam updates to the
    clipped surrogate. All randomness comes from streams keyed by the seed and the
    iteration, so a run resumed from a checkpoint continues bit-exactly.

    Parameters
    ----------
    config : TrainerConfig
        Run settings.
    """

    def __init__(self, config: TrainerConfig) -> None:
        self.config = config
        self.schedule = config.schedule
        self.conditions = task_conditions(config.architecture.num_conditions)
        self.policy = VelocityField(
            config.architecture, config.schedule.num_steps, seed=config.seed
        )
        self.adam = AdamState()
        self.buffer = ReplayBuffer(config.resolved_capacity, config.decay_rate)
        self.iteration = 0
        self.history: List[IterationMetrics] = []
        self.reference: Optional[VelocityField] = None
        if config.kl_beta > 0:
            self.reference = self.policy.snapshot()

    @classmethod
    def from_state(cls, state: TrainerState) -> "Trainer":
        """Trainer continuing from a restored state."""
        trainer = cls(state.config)
        trainer.policy = state.policy
        trainer.adam = state.adam
        trainer.buffer = state.buffer
        trainer.iteration = state.iteration
        return trainer

    @classmethod
    def from_checkpoint(
        cls, path: str | Path, config: Optional[TrainerConfig] = None
    ) -> "Trainer":
        """Trainer continuing from a checkpoint file.

        When a config is given it replaces the stored one, e.g. to extend
        `total_iterations`; its architecture and schedule must match the checkpoint.
        """
        state = load_checkpoint(path, expected=config)
        if config is not None:
            state.config = config
        return cls.from_state(state)

    def state(self) -> TrainerState:
        """Snapshot of the current trainer state."""
        return TrainerState(
            config=self.config,
            iteration=self.iteration,
            policy=self.policy.copy(),
            adam=self.adam.copy(),
            buffer=self.buffer,
        )

    def plan_requests(self, streams: RngStreams) -> List[GroupRequest]:
        """Choose the condition of every group slot of an iteration.

        Conditions are drawn uniformly from the task set. Each slot is flagged for
        reuse with probability `off_policy_fraction`; at most as many slots as the
        buffer has entries are kept, and they are given distinct buffered conditions.
        """
        config = self.config
        count = config.groups_per_iteration
        ids = streams.control(ControlStream.CONDITIONS).integers(
            0, len(self.conditions), size=count
        )
        requests = [GroupRequest(self.conditions[int(i)]) for i in ids]
        fraction = config.effective_fraction
        if fraction <= 0 or len(self.buffer) == 0:
            return requests
        flags = streams.control(ControlStream.BUFFER_FLAGS).random(count) < fraction
        slots = np.flatnonzero(flags)[: len(self.buffer)]
        chosen = self.buffer.sample_conditions(
            len(slots), streams.control(ControlStream.BUFFER_PICK)
        )
        for slot, condition in zip(slots, chosen):
            requests[int(slot)] = GroupRequest(condition, use_buffer=True)
        return requests

    def _loss(
        self,
        groups: Sequence[GroupBatch],
        vf_old: VelocityField,
        counter: Optional[ClampCounter],
    ) -> Tuple[Tensor, ClipStats]:
        config = self.config
        mode = config.objective_mode
        if mode is None:
            return on_policy_grpo_loss(
                groups,
                self.policy,
                vf_old,
                self.schedule,
                epsilon=config.clip_epsilon,
                counter=counter,
            )
        return batch_surrogate_loss(
            groups,
            self.policy,
            vf_old,
            self.schedule,
            epsilon=config.clip_epsilon,
            mode=mode,
            kl_beta=config.kl_beta,
            kl_reference=self.reference,
            counter=counter,
        )

    def _offending_group(
        self, groups: Sequence[GroupBatch], vf_old: VelocityField
    ) -> GroupBatch:
        for group in groups:
            try:
                loss, _ = self._loss([group], vf_old, None)
            except ArithmeticError:
                return group
            if not math.isfinite(loss.item()):
                return group
        return max(groups, key=lambda group: float(np.max(np.abs(group.log_weights))))

    def _diverged(
        self,
        iteration: int,
        cause: str,
        groups: Sequence[GroupBatch],
        vf_old: VelocityField,
    ) -> TrainingDivergedError:
        self.policy.zero_grad()
        group = self._offending_group(groups, vf_old)
        logger.error(
            "Iteration %d diverged in group %d: %s", iteration, group.slot, cause
        )
        return TrainingDivergedError(iteration, cause, group.to_dict())

    def run_iteration(self) -> IterationMetrics:
        """Run one full iteration and return its metrics.

        Raises
        ------
        TrainingDivergedError
            If the loss or a gradient is non-finite. Parameters are left as they
            were before the failing update.
        """
        config = self.config
        iteration = self.iteration + 1
        started = time.perf_counter()
        streams = RngStreams(config.seed, iteration)
        counter = ClampCounter()

        vf_old = self.policy.snapshot()
        fingerprint = vf_old.fingerprint()
        groups = build_groups(
            self.plan_requests(streams),
            vf_old,
            self.buffer,
            self.schedule,
            config.reward,
            config.group_size,
            config.resolved_truncation_step,
            streams,
            iteration=iteration,
            std_floor=config.std_floor,
            log_weight_bounds=config.log_weight_bounds,
            counter=counter,
        )
        if vf_old.fingerprint() != fingerprint:
            raise RolloutLeakError()

        if config.mode is not TrainingMode.ON_POLICY_BASELINE:
            for group in groups:
                self.buffer.offer(group.members, iteration=iteration)
            self.buffer.decay()

        first: Optional[Tuple[float, ClipStats]] = None
        for _ in range(config.inner_epochs):
            self.policy.zero_grad()
            try:
                with ComputationTape():
                    loss, stats = self._loss(
                        groups, vf_old, counter if first is None else None
                    )
                backward(loss)
                params, adam = adam_step(
                    self.policy.state_dict(),
                    self.policy.gradients(),
                    self.adam,
                    config.learning_rate,
                    betas=(config.adam_beta1, config.adam_beta2),
                    eps=config.adam_eps,
                )
            except (NonFiniteError, NonFiniteGradientError) as error:
                raise self._diverged(iteration, str(error), groups, vf_old) from error
            self.policy.load_state_dict(params)
            self.adam = adam
            if first is None:
                first = (loss.item(), stats)
        self.policy.zero_grad()
        assert first is not None

        metrics = IterationMetrics.collect(
            iteration,
            groups,
            first[0],
            first[1],
            counter,
            buffer_size=len(self.buffer),
            buffer_mean_retention=self.buffer.mean_retention(),
            wall_time=time.perf_counter() - started,
        )
        self.iteration = iteration
        self.history.append(metrics)
        self._log(metrics)
        return metrics

    def _log(self, metrics: IterationMetrics) -> None:
        config = self.config
        if metrics.weight_clamp_events:
            logger.warning(
                "Iteration %d: %d correction weights hit their log bounds.",
                metrics.iteration,
                metrics.weight_clamp_events,
            )
        if metrics.degenerate_groups > config.groups_per_iteration / 2:
            logger.warning(
                "Iteration %d: %d of %d groups have degenerate rewards.",
                metrics.iteration,
                metrics.degenerate_groups,
                config.groups_per_iteration,
            )
        if metrics.iteration % config.log_every == 0:
            logger.info(
                "Iteration %d: mean reward %.4f, loss %.5f, off-policy clip "
                "fraction %.3f, buffer size %d.",
                metrics.iteration,
                metrics.mean_reward,
                metrics.loss,
                metrics.clip_fraction_off_policy,
                metrics.buffer_size,
            )


@dataclass
class TrainingResult:
    """Outcome of `train`.

    Attributes
    ----------
    metrics : List[IterationMetrics]
        Metrics of the iterations run by this call.
    output_dir : Optional[Path]
        Directory holding the outputs, if any were written.
    final_checkpoint : Optional[Path]
    summary : Dict[str, Any]
        Contents of the summary JSON.
    trainer : Optional[Trainer]
        The trainer, for further inspection.
    """

    metrics: List[IterationMetrics]
    output_dir: Optional[Path] = None
    final_checkpoint: Optional[Path] = None
    summary: Dict[str, Any] = field(default_factory=dict)
    trainer: Optional[Trainer] = None


def _summary(
    trainer: Trainer,
    rewards: Sequence[float],
    wall_time: float,
    diverged: Optional[TrainingDivergedError] = None,
) -> Dict[str, Any]:
    history = trainer.history
    final_mean = (
        ThresholdHeuristic(rewards, min(10, len(rewards))).final_trailing_mean()
        if rewards
        else math.nan
    )
    return {
        "config_hash": config_hash(trainer.config),
        "mode": str(trainer.config.mode),
        "seed": trainer.config.seed,
        "iterations_completed": trainer.iteration,
        "final_trailing_mean_reward": final_mean,
        "wall_time_seconds": wall_time,
        "weight_clamp_events": sum(m.weight_clamp_events for m in history),
        "buffer_group_count": sum(m.buffer_groups for m in history),
        "diverged": diverged is not None,
        "divergence": None
        if diverged is None
        else {"iteration": diverged.iteration, "message": diverged.message},
    }


def train(
    config: TrainerConfig,
    output_dir: Optional[str | Path] = None,
    resume_from: Optional[str | Path] = None,
    progress: bool = False,
) -> TrainingResult:
    """Train for `config.total_iterations` iterations.

    With an output directory, writes `metrics.csv` (one row per completed iteration),
    `checkpoints/checkpoint_<iteration>.npz` every `checkpoint_every` iterations,
    `checkpoints/final.npz` and `summary.json`. On divergence the summary and a
    `divergence.json` dump of the offending group are written before re-raising.

    Parameters
    ----------
    config : TrainerConfig
        Run settings.
    output_dir : Optional[str | Path], optional
        Where to write outputs; None keeps everything in memory.
    resume_from : Optional[str | Path], optional
        Checkpoint to continue from. The metrics log is cut back to its iteration.
    progress : bool, optional
        Show a progress bar, by default False.

    Raises
    ------
    TrainingDivergedError
        If the loss becomes non-finite.
    CheckpointError
        If `resume_from` cannot be loaded or does not match the config.
    """
    trainer = (
        Trainer(config)
        if resume_from is None
        else Trainer.from_checkpoint(resume_from, config)
    )
    out = None if output_dir is None else Path(output_dir)
    log = None
    rewards: List[float] = []
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        log = MetricsLog(
            out / "metrics.csv",
            config.schedule.num_steps,
            resume_after=None if resume_from is None else trainer.iteration,
        )
        if resume_from is not None:
            rewards = _logged_rewards(out / "metrics.csv")

    started = time.perf_counter()
    remaining = range(trainer.iteration + 1, config.total_iterations + 1)
    try:
        for iteration in tqdm(
            remaining, desc="Training", disable=not progress, dynamic_ncols=True
        ):
            metrics = trainer.run_iteration()
            rewards.append(metrics.mean_reward)
            if log is not None:
                log.append(metrics)
            if (
                out is not None
                and config.checkpoint_every
                and iteration % config.checkpoint_every == 0
            ):
                save_checkpoint(
                    out / "checkpoints" / f"checkpoint_{iteration:05d}.npz",
                    trainer.state(),
                )
    except TrainingDivergedError as error:
        if out is not None:
            summary = _summary(trainer, rewards, time.perf_counter() - started, error)
            _write_json(out / "summary.json", summary)
            _write_json(out / "divergence.json", error.dump)
        raise

    final = None
    summary = _summary(trainer, rewards, time.perf_counter() - started)
    if out is not None:
        final = save_checkpoint(out / "checkpoints" / "final.npz", trainer.state())
        summary["final_checkpoint"] = str(final)
        _write_json(out / "summary.json", summary)
    return TrainingResult(
        metrics=list(trainer.history),
        output_dir=out,
        final_checkpoint=final,
        summary=summary,
        trainer=trainer,
    )


def _logged_rewards(path: Path) -> List[float]:
    header, rows = read_metrics(path)
    column = header.index("mean_reward")
    return [float(row[column]) for row in rows]


def _write_json(path: Path, payload: Dict[str, Any]) -> None:
    with path.open("w", encoding="utf-8") as handle:
        json.dump(payload, handle, indent=2, sort_keys=True)
        handle.write("\n")
