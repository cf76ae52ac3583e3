"""Rank correlation between tasks and the parameter reuse it licenses.

Before a new task trains, every previously learned model is evaluated on
the new task's training inputs.  The Spearman rank correlation (SRCC)
between those predictions and the new targets decides how much of the old
task's parameter set stays visible: positively or un-correlated tasks are
reused in full, negatively correlated ones have a slice of their
smallest-magnitude weights muted for the new task only.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .maskstore import MaskRegistry, ReuseRecord, _smallest_by_magnitude
from .neuralcore import NetworkParams, predict

log = logging.getLogger(__name__)


class UndefinedCorrelationError(ValueError):
    """SRCC is not defined for this input (too short or constant)."""


def rank_with_ties(values: np.ndarray) -> np.ndarray:
    """Fractional ranks, 1-based, equal values sharing their average rank."""
    values = np.asarray(values, dtype=np.float64)
    n = values.size
    order = np.argsort(values, kind="stable")
    sorted_vals = values[order]
    boundaries = np.flatnonzero(np.diff(sorted_vals) != 0.0)
    starts = np.concatenate(([0], boundaries + 1))
    ends = np.concatenate((boundaries, [n - 1]))
    ranks = np.empty(n, dtype=np.float64)
    for s, e in zip(starts.tolist(), ends.tolist()):
        ranks[order[s : e + 1]] = (s + e) / 2.0 + 1.0
    return ranks


def srcc(pred: np.ndarray, truth: np.ndarray) -> float:
    """Spearman rank correlation: Pearson correlation of tie-averaged ranks.

    Ranks are centered by their analytic mean (n + 1) / 2, which tie
    averaging preserves exactly; that keeps perfectly reversed inputs at
    exactly -1.0 instead of one rounding step away from it.
    """
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.ndim != 1 or truth.ndim != 1 or pred.shape != truth.shape:
        raise ValueError("srcc expects two equally sized vectors")
    n = pred.size
    if n < 2:
        raise UndefinedCorrelationError("srcc needs at least two samples")
    if np.all(truth == truth[0]):
        raise UndefinedCorrelationError("srcc is undefined for constant truth values")
    if np.all(pred == pred[0]):
        raise UndefinedCorrelationError("srcc is undefined for constant predictions")

    center = (n + 1) / 2.0
    rp = rank_with_ties(pred) - center
    rt = rank_with_ties(truth) - center
    value = (rp @ rt) / math.sqrt((rp @ rp) * (rt @ rt))
    return float(min(1.0, max(-1.0, value)))


def reuse_ratio(srcc_value: float, lam: float) -> float:
    """Fraction of an earlier task's weights the current task keeps visible.

    1 for non-negative correlation; decays linearly with the correlation,
    scaled by ``lam``, when the tasks rank opposite ways.
    """
    if not -1.0 <= srcc_value <= 1.0:
        raise ValueError(f"srcc must lie in [-1, 1], got {srcc_value}")
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must lie in [0, 1], got {lam}")
    if srcc_value < 0.0:
        return 1.0 + lam * srcc_value
    return 1.0


@dataclass
class RelevanceRow:
    prev_task: int
    srcc: float
    reuse_ratio: float
    muted_count: int
    predictions: np.ndarray


@dataclass
class RelevanceReport:
    task: int
    rows: list[RelevanceRow]

    def row_for(self, prev_task: int) -> RelevanceRow:
        for row in self.rows:
            if row.prev_task == prev_task:
                return row
        raise KeyError(prev_task)


def plan_muting(
    registry: MaskRegistry,
    params: NetworkParams,
    task: int,
    ratios: dict[int, float],
) -> dict[int, list[np.ndarray]]:
    """Per earlier task, the floor((1 - R) * owned) smallest weights per layer."""
    muted: dict[int, list[np.ndarray]] = {}
    for prev, ratio in ratios.items():
        keep_out = 1.0 - ratio
        layers = []
        for layer, labels in enumerate(registry.current):
            owned = np.flatnonzero((np.abs(labels) == prev).reshape(-1))
            bitmap = np.zeros(labels.shape, dtype=bool)
            count = int(math.floor(keep_out * owned.size))
            if count > 0:
                flat_weights = params.weights[layer].reshape(-1)
                picked = _smallest_by_magnitude(flat_weights[owned], count)
                bitmap.reshape(-1)[owned[picked]] = True
            layers.append(bitmap)
        muted[prev] = layers
    return muted


def relevance_guided_reuse(
    registry: MaskRegistry,
    params: NetworkParams,
    train_inputs: np.ndarray,
    train_targets: np.ndarray,
    task: int,
    lam: float,
    *,
    records: dict[int, ReuseRecord],
    biases: dict[int, list[np.ndarray]],
) -> tuple[ReuseRecord, RelevanceReport]:
    """Evaluate every earlier task on the new data, then mute accordingly.

    Each earlier model is composed from the still-unmodified parameters
    (cannibalized donors through their min view) and scored on the full
    training split.  Muting is planned only after all evaluations finish,
    so no evaluation sees a partially muted model.
    """
    if task < 2:
        raise ValueError("relevance-guided reuse starts with the second task")
    for prev in range(1, task):
        if registry.owned_count(prev) == 0:
            raise LookupError(f"task {prev} has not been trained; cannot assess relevance")
        if prev not in biases:
            raise LookupError(f"no bias snapshot for task {prev}")

    rows: list[RelevanceRow] = []
    ratios: dict[int, float] = {}
    for prev in range(1, task):
        mode = "min" if prev in registry.cannibalized else "max"
        view = registry.compose_view(prev, mode, reuse=records.get(prev))
        preds = predict(params.with_biases(biases[prev]), view, train_inputs)
        try:
            relevance = srcc(preds, train_targets)
        except UndefinedCorrelationError:
            # A degenerate constant predictor carries no ranking evidence;
            # treat it like zero correlation so the old task is fully reused.
            log.debug("task %d produced constant predictions; treating srcc as 0", prev)
            relevance = 0.0
        ratio = reuse_ratio(relevance, lam)
        ratios[prev] = ratio
        rows.append(RelevanceRow(prev, relevance, ratio, 0, preds))

    muted = plan_muting(registry, params, task, ratios)
    record = ReuseRecord(task=task, ratios=ratios, muted=muted)
    for row in rows:
        row.muted_count = record.muted_count(row.prev_task)
    return record, RelevanceReport(task=task, rows=rows)
