"""This module saves and restores complete trainer state as `.npz` archives."""

from __future__ import annotations

import json
import logging
import zipfile
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Optional

import numpy as np
from numpy.typing import NDArray

from opgrpo.buffer import BufferEntry, ReplayBuffer
from opgrpo.flow import Condition, Trajectory, VelocityField
from opgrpo.training._adam import AdamState
from opgrpo.training._config import TrainerConfig, config_hash

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1


class CheckpointError(ValueError):
    """Error raised when a checkpoint is unreadable, incomplete or incompatible."""

    def __init__(self, path: str | Path, reason: str) -> None:
        self.path = Path(path)
        self.message = f"Cannot load checkpoint {self.path}: {reason}"
        super().__init__(self.message)


@dataclass
class TrainerState:
    """Everything needed to continue training exactly where it stopped.

    Random streams are keyed by (seed, iteration, ...), so the completed iteration
    count is the whole of the generator state.

    Attributes
    ----------
    config : TrainerConfig
    iteration : int
        Number of completed iterations.
    policy : VelocityField
        Current parameters.
    adam : AdamState
        Optimiser moments and step count.
    buffer : ReplayBuffer
        Replay buffer contents with retention scores.
    """

    config: TrainerConfig
    iteration: int
    policy: VelocityField
    adam: AdamState
    buffer: ReplayBuffer


def save_checkpoint(path: str | Path, state: TrainerState) -> Path:
    """Write the state to a `.npz` archive and return its path.

    Arrays are stored as `param/<name>`, `adam_m/<name>`, `adam_v/<name>`,
    `buffer/<condition>/latents` and `buffer/<condition>/step_logprobs`; everything
    else lives in a JSON `header` entry.
    """
    file_path = Path(path)
    file_path.parent.mkdir(parents=True, exist_ok=True)
    arrays: Dict[str, NDArray[Any]] = {}
    for name, values in state.policy.state_dict().items():
        arrays[f"param/{name}"] = values
    for name, values in state.adam.first_moment.items():
        arrays[f"adam_m/{name}"] = values
    for name, values in state.adam.second_moment.items():
        arrays[f"adam_v/{name}"] = values
    entries = []
    for entry in state.buffer.entries:
        key = f"buffer/{entry.condition_id}"
        arrays[f"{key}/latents"] = np.asarray(entry.trajectory.latents)
        arrays[f"{key}/step_logprobs"] = np.asarray(entry.trajectory.step_logprobs)
        entries.append(
            {
                "condition_id": entry.condition_id,
                "retention_score": entry.retention_score,
                "reward": entry.trajectory.reward,
                "insert_iteration": entry.insert_iteration,
                "birth_iteration": entry.trajectory.birth_iteration,
                "origin": str(entry.trajectory.origin),
            }
        )
    header = {
        "format_version": FORMAT_VERSION,
        "config": state.config.to_dict(),
        "config_hash": config_hash(state.config),
        "iteration": int(state.iteration),
        "seed": state.config.seed,
        "adam_step": state.adam.step,
        "buffer_capacity": state.buffer.capacity,
        "buffer_decay_rate": state.buffer.decay_rate,
        "buffer": entries,
    }
    arrays["header"] = np.array(json.dumps(header, sort_keys=True))
    with file_path.open("wb") as handle:
        np.savez(handle, **arrays)
    logger.debug("Wrote checkpoint %s at iteration %d.", file_path, state.iteration)
    return file_path


def _check_compatible(
    path: Path, stored: TrainerConfig, expected: TrainerConfig
) -> None:
    for section in ("architecture", "schedule"):
        have = getattr(stored, section).to_dict()
        want = getattr(expected, section).to_dict()
        for key, value in want.items():
            if have[key] != value:
                raise CheckpointError(
                    path,
                    f"{section}.{key} is {have[key]!r} in the checkpoint but "
                    f"{value!r} was expected.",
                )


def load_checkpoint(
    path: str | Path, expected: Optional[TrainerConfig] = None
) -> TrainerState:
    """Read a checkpoint written by `save_checkpoint`. Nothing is unpickled.

    Parameters
    ----------
    path : str | Path
        Archive to read.
    expected : Optional[TrainerConfig], optional
        When given, the stored architecture and schedule must equal this config's.

    Raises
    ------
    CheckpointError
        If the file is missing, truncated or corrupt, lacks an entry, or does not
        match `expected`.
    """
    file_path = Path(path)
    try:
        with np.load(file_path, allow_pickle=False) as archive:
            arrays = {name: archive[name] for name in archive.files}
    except (OSError, ValueError, EOFError, zipfile.BadZipFile) as error:
        raise CheckpointError(file_path, str(error) or "unreadable archive") from error
    try:
        header = json.loads(str(arrays.pop("header")))
        if header["format_version"] != FORMAT_VERSION:
            raise CheckpointError(
                file_path, f"unsupported format version {header['format_version']}"
            )
        config = TrainerConfig.from_mapping(header["config"])
        if expected is not None:
            _check_compatible(file_path, config, expected)
        policy = VelocityField(
            config.architecture, config.schedule.num_steps, seed=config.seed
        )
        policy.load_state_dict(
            {
                name[len("param/") :]: values
                for name, values in arrays.items()
                if name.startswith("param/")
            }
        )
        adam = AdamState(step=int(header["adam_step"]))
        for name in policy.parameters:
            if adam.step:
                adam.first_moment[name] = arrays[f"adam_m/{name}"]
                adam.second_moment[name] = arrays[f"adam_v/{name}"]
        buffer = ReplayBuffer(header["buffer_capacity"], header["buffer_decay_rate"])
        num_conditions = config.architecture.num_conditions
        restored = []
        for meta in header["buffer"]:
            key = f"buffer/{meta['condition_id']}"
            trajectory = Trajectory(
                condition=Condition.one_hot(meta["condition_id"], num_conditions),
                latents=arrays[f"{key}/latents"],
                step_logprobs=arrays[f"{key}/step_logprobs"],
                reward=meta["reward"],
                origin=meta["origin"],
                birth_iteration=meta["birth_iteration"],
            )
            restored.append(
                BufferEntry(
                    trajectory, meta["retention_score"], meta["insert_iteration"]
                )
            )
        buffer.restore(restored)
    except CheckpointError:
        raise
    except (KeyError, TypeError, ValueError) as error:
        raise CheckpointError(file_path, f"missing or invalid entry: {error}") from error
    return TrainerState(config, int(header["iteration"]), policy, adam, buffer)


def checkpoint_roundtrip(state: TrainerState, path: str | Path) -> TrainerState:
    """Save the state and read it back."""
    return load_checkpoint(save_checkpoint(path, state))
