"""This module merges metrics logs of several runs into one long-format table."""

from __future__ import annotations

import csv
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

from opgrpo.training import read_metrics

LONG_COLUMNS = ("run_id", "iteration", "metric", "value")


class SchemaMismatchError(ValueError):
    """Error raised when metrics logs to be merged have different columns."""

    def __init__(self, path: str | Path, expected: Sequence[str]) -> None:
        self.message = (
            f"Metrics file {path} does not share the column layout of the first "
            f"input ({len(expected)} columns starting {list(expected[:3])})."
        )
        super().__init__(self.message)


def long_format(
    inputs: Sequence[Tuple[str, str | Path]],
    metrics: Optional[Sequence[str]] = None,
) -> List[Tuple[str, str, str, str]]:
    """Rows (run_id, iteration, metric, value), iterating runs, then iterations, then
    metrics in column order.

    Parameters
    ----------
    inputs : Sequence[Tuple[str, str | Path]]
        (run id, metrics CSV path) pairs.
    metrics : Optional[Sequence[str]], optional
        Metrics to keep, by default every column but the iteration.

    Raises
    ------
    ValueError
        If there are no inputs or a requested metric is unknown.
    SchemaMismatchError
        If the inputs do not share one header.
    """
    if not inputs:
        raise ValueError("plot-data needs at least one metrics file.")
    tables = [(run, path, *read_metrics(path)) for run, path in inputs]
    header = tables[0][2]
    wanted = (
        [name for name in header if name != "iteration"]
        if metrics is None
        else list(metrics)
    )
    unknown = [name for name in wanted if name not in header]
    if unknown:
        raise ValueError(f"Unknown metrics requested: {unknown}")
    indices = [(name, header.index(name)) for name in wanted]
    iteration_index = header.index("iteration")

    rows: List[Tuple[str, str, str, str]] = []
    for run, path, columns, values in tables:
        if columns != header:
            raise SchemaMismatchError(path, header)
        for record in values:
            for name, index in indices:
                rows.append((run, record[iteration_index], name, record[index]))
    return rows


def run_label(path: str | Path) -> str:
    """Run id of a metrics file: its directory name."""
    return Path(path).resolve().parent.name


def write_long_format(
    path: str | Path, rows: Sequence[Tuple[str, str, str, str]]
) -> Path:
    """Write long-format rows as CSV."""
    file_path = Path(path)
    file_path.parent.mkdir(parents=True, exist_ok=True)
    with file_path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(LONG_COLUMNS)
        writer.writerows(rows)
    return file_path
