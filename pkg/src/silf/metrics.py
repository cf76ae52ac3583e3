"""Score matrix bookkeeping and continual-learning summary metrics.

``entries[m][i]`` is the SRCC of task ``i``'s test split measured right
after task ``m`` finished training, so the matrix is lower triangular and
grows one row per task.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np


class UndefinedMetricError(ValueError):
    """The metric needs more completed tasks than the matrix holds."""


class MatrixFormatError(ValueError):
    """A serialized score matrix is malformed."""


class ScoreMatrix:
    def __init__(self, rows: list[list[float]] | None = None):
        self._rows: list[list[float]] = []
        for row in rows or []:
            self.append_row(row)

    def append_row(self, values) -> None:
        values = [float(v) for v in values]
        expected = len(self._rows) + 1
        if len(values) != expected:
            raise ValueError(f"row {expected} must hold {expected} entries, got {len(values)}")
        self._rows.append(values)

    @property
    def task_count(self) -> int:
        return len(self._rows)

    def row(self, m: int) -> list[float]:
        return list(self._rows[m - 1])

    def entry(self, m: int, i: int) -> float:
        if not 1 <= i <= m <= self.task_count:
            raise IndexError(f"entry ({m}, {i}) outside the lower triangle")
        return self._rows[m - 1][i - 1]

    def diagonal(self) -> list[float]:
        return [self._rows[i][i] for i in range(self.task_count)]

    def truncated(self, t: int) -> "ScoreMatrix":
        """The sub-matrix as it looked right after task ``t``."""
        if not 1 <= t <= self.task_count:
            raise IndexError(f"cannot truncate to {t} with {self.task_count} rows")
        return ScoreMatrix([self._rows[m][: m + 1] for m in range(t)])

    def __eq__(self, other) -> bool:
        return isinstance(other, ScoreMatrix) and self._rows == other._rows

    # -- serialization -------------------------------------------------------

    def to_csv_text(self) -> str:
        t = self.task_count
        out = io.StringIO()
        header = ["after_task"] + [f"task_{i}" for i in range(1, t + 1)]
        out.write(",".join(header) + "\n")
        for m in range(1, t + 1):
            cells = [str(m)]
            cells += [repr(v) for v in self._rows[m - 1]]
            cells += [""] * (t - m)
            out.write(",".join(cells) + "\n")
        return out.getvalue()

    @classmethod
    def from_csv_text(cls, text: str) -> "ScoreMatrix":
        lines = [line for line in text.splitlines() if line.strip()]
        if not lines:
            raise MatrixFormatError("empty score matrix file")
        header = lines[0].split(",")
        if header[0] != "after_task" or any(
            h != f"task_{i}" for i, h in enumerate(header[1:], start=1)
        ):
            raise MatrixFormatError(f"unexpected header {lines[0]!r}")
        matrix = cls()
        for m, line in enumerate(lines[1:], start=1):
            cells = line.split(",")
            if len(cells) != len(header):
                raise MatrixFormatError(f"row {m} has {len(cells)} cells, expected {len(header)}")
            if cells[0] != str(m):
                raise MatrixFormatError(f"row {m} is labeled {cells[0]!r}")
            values = cells[1 : m + 1]
            if any(c != "" for c in cells[m + 1 :]):
                raise MatrixFormatError(f"row {m} has entries above the diagonal")
            try:
                matrix.append_row([float(v) for v in values])
            except ValueError as exc:
                raise MatrixFormatError(f"row {m}: {exc}") from exc
        return matrix


def average_accuracy(matrix: ScoreMatrix) -> float:
    """Mean SRCC over every learned task, measured after the final task."""
    t = matrix.task_count
    if t < 1:
        raise UndefinedMetricError("average accuracy needs at least one task")
    return float(np.mean(matrix.row(t)))


def average_forgetting(matrix: ScoreMatrix) -> float:
    """Mean over old tasks of their peak-minus-final SRCC; 0 means no forgetting."""
    t = matrix.task_count
    if t < 2:
        raise UndefinedMetricError("average forgetting needs at least two tasks")
    total = 0.0
    for i in range(1, t):
        final = matrix.entry(t, i)
        total += max(matrix.entry(m, i) - final for m in range(i, t + 1))
    return total / (t - 1)


def average_plasticity(matrix: ScoreMatrix) -> float:
    """Mean SRCC each task reached immediately after its own training."""
    t = matrix.task_count
    if t < 1:
        raise UndefinedMetricError("average plasticity needs at least one task")
    return float(np.mean(matrix.diagonal()))


def stage_summary(matrix: ScoreMatrix) -> dict[str, float | None]:
    return {
        "average_accuracy": average_accuracy(matrix),
        "average_forgetting": average_forgetting(matrix) if matrix.task_count >= 2 else None,
        "average_plasticity": average_plasticity(matrix),
    }


def metrics_payload(matrix: ScoreMatrix, preset_tasks: int) -> dict:
    """The metrics.json payload: full-run values plus per-stage variants."""
    full = stage_summary(matrix)
    preset = stage_summary(matrix.truncated(min(preset_tasks, matrix.task_count)))
    payload = dict(full)
    payload["stages"] = {"preset": preset, "full": full}
    return payload
