"""This module describes run directories and where they live."""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, Optional

from opgrpo import __version__
from opgrpo.training import TrainerConfig, config_hash

OUTPUT_ROOT_ENV = "OPGRPO_OUTPUT_ROOT"
DEFAULT_OUTPUT_ROOT = "runs"


def resolve_output_root(flag: Optional[str | Path] = None) -> Path:
    """Output root from the flag, else the environment variable, else ./runs."""
    if flag is not None:
        return Path(flag)
    return Path(os.environ.get(OUTPUT_ROOT_ENV, DEFAULT_OUTPUT_ROOT))


def run_id(config: TrainerConfig) -> str:
    """Identifier `<mode>-seed<seed>-<hash prefix>`, unique per resolved config."""
    return f"{config.mode}-seed{config.seed}-{config_hash(config)[:8]}"


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


@dataclass
class RunManifest:
    """Provenance of one run directory. Timestamps live only here, never in CSVs.

    Attributes
    ----------
    run_id : str
    config_hash : str
        Hash of the resolved config stored next to the manifest.
    code_version : str
    started_at : str
        ISO-8601 UTC timestamp.
    finished_at : Optional[str]
    status : str
        "running", "completed", "diverged" or "failed".
    outputs : Dict[str, str]
        Output name to path.
    """

    run_id: str
    config_hash: str
    code_version: str = f"opgrpo {__version__}"
    started_at: str = field(default_factory=_now)
    finished_at: Optional[str] = None
    status: str = "running"
    outputs: Dict[str, str] = field(default_factory=dict)

    @classmethod
    def start(cls, config: TrainerConfig) -> "RunManifest":
        """Manifest of a run that is about to start."""
        return cls(run_id=run_id(config), config_hash=config_hash(config))

    def finish(self, status: str) -> None:
        """Stamp the end time and final status."""
        self.finished_at = _now()
        self.status = status

    def write(self, directory: str | Path) -> Path:
        """Write `manifest.json` into the directory."""
        path = Path(directory) / "manifest.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", encoding="utf-8") as handle:
            json.dump(asdict(self), handle, indent=2, sort_keys=True)
            handle.write("\n")
        return path

    @classmethod
    def read(cls, directory: str | Path) -> "RunManifest":
        """Read `manifest.json` from a run directory."""
        with (Path(directory) / "manifest.json").open(encoding="utf-8") as handle:
            return cls(**json.load(handle))


def write_config(directory: str | Path, config: TrainerConfig) -> Path:
    """Store the resolved config as `config.json`."""
    path = Path(directory) / "config.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as handle:
        json.dump(config.to_dict(), handle, indent=2, sort_keys=True)
        handle.write("\n")
    return path
