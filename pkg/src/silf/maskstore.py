"""Per-weight task ownership labels and their lifecycle.

Every weight carries one signed 16-bit label:

* ``0``      free, trainable by the next task
* ``+t``     committed to task ``t``
* ``-t``     owned by task ``t`` but flagged reclaimable; it still serves in
             task ``t``'s full (max) model and may be handed to one later
             additional task

Two pruning passes move a task through its lifecycle.  The first pass keeps
the largest-magnitude free weights for the task (label ``+t``) and releases
the rest back to the pool with their values zeroed.  The second pass
relabels the smallest-magnitude kept weights to ``-t`` without touching
their values, which splits the task's parameters into a minimum model
(``+t`` only) and a maximum model (``+t`` and ``-t``).  An additional task
``t`` beyond the preset stage takes over every ``-(t - n)`` weight in one
shot; after that the donor task can only serve its minimum model.

All selection inside a pass is per layer, ordered by absolute value with
ties broken by lower flat index first.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .neuralcore import NetworkParams, ParticipationView

VIEW_MODES = ("max", "min")
TRAIN_PHASES = ("initial", "max_finetune", "min_finetune")
RECLAIM_POLICIES = ("reinit", "keep-values")
RECLAIM_INIT_SPAN = 0.01


class MaskError(Exception):
    """Base class for mask lifecycle errors."""


class CapacityError(MaskError):
    """A layer cannot supply the weights a pruning pass needs."""


class LifecycleError(MaskError):
    """An operation arrived out of lifecycle order."""


class StaleModelError(MaskError):
    """The maximum model of a cannibalized task was requested."""


class ScalabilityExceededError(MaskError):
    """More additional tasks than reclaimable pools."""


class DoubleReclaimError(MaskError):
    """A reclaimable pool was requested a second time."""


@dataclass
class LayerPruneStats:
    layer: int
    kept_count: int
    pruned_count: int
    threshold: float


@dataclass
class PruneOutcome:
    task: int
    stage: str
    layers: list[LayerPruneStats]

    @property
    def kept_count(self) -> int:
        return sum(s.kept_count for s in self.layers)

    @property
    def pruned_count(self) -> int:
        return sum(s.pruned_count for s in self.layers)


@dataclass
class ReuseRecord:
    """Which earlier weights a task muted, and the reuse ratio behind it.

    ``muted[i]`` holds one boolean array per layer, true exactly at the
    positions owned by task ``i`` that the recording task excludes from its
    own forward passes.  Muting never changes values and never affects task
    ``i``'s own views.
    """

    task: int
    ratios: dict[int, float] = field(default_factory=dict)
    muted: dict[int, list[np.ndarray]] = field(default_factory=dict)

    def muted_count(self, prev_task: int) -> int:
        return int(sum(m.sum() for m in self.muted.get(prev_task, [])))


def count_from_ratio(ratio: float, candidates: int) -> int:
    """ceil(ratio * candidates) with a nudge so decimal ratios act as written.

    0.4 * 5 lands a hair above 2.0 in binary; the nudge keeps the count at 2.
    """
    if not 0.0 <= ratio < 1.0:
        raise ValueError(f"pruning ratio must be in [0, 1), got {ratio}")
    if candidates < 0:
        raise ValueError("candidate count must be non-negative")
    return math.ceil(ratio * candidates - 1e-9)


def _smallest_by_magnitude(values: np.ndarray, count: int) -> np.ndarray:
    """Indices (into ``values``) of the ``count`` smallest |v|, stable order.

    A stable sort on |v| breaks ties toward the lower original index, which
    for flat-indexed candidate lists means the lower flat index goes first.
    """
    order = np.argsort(np.abs(values), kind="stable")
    return order[:count]


class MaskRegistry:
    """Current labels plus archived pruning snapshots for every task."""

    def __init__(self, layer_shapes: list[tuple[int, int]], n: int, k: int):
        if n < 1:
            raise ValueError("at least one preset task required")
        if k < 0:
            raise ValueError("additional task count must be non-negative")
        self.layer_shapes = [tuple(s) for s in layer_shapes]
        self.n = n
        self.k = k
        self.current: list[np.ndarray] = [np.zeros(s, dtype=np.int16) for s in self.layer_shapes]
        self.archived_first: dict[int, list[np.ndarray]] = {}
        self.archived_second: dict[int, list[np.ndarray]] = {}
        self.cannibalized: set[int] = set()

    @classmethod
    def for_params(cls, params: NetworkParams, n: int, k: int) -> "MaskRegistry":
        return cls(params.layer_shapes(), n, k)

    # -- bookkeeping helpers -------------------------------------------------

    def _snapshot(self) -> list[np.ndarray]:
        return [labels.copy() for labels in self.current]

    def free_count(self) -> int:
        return int(sum((labels == 0).sum() for labels in self.current))

    def owned_count(self, task: int) -> int:
        return int(sum((np.abs(labels) == task).sum() for labels in self.current))

    def label_counts(self) -> dict[int, int]:
        counts: dict[int, int] = {}
        for labels in self.current:
            values, freq = np.unique(labels, return_counts=True)
            for v, c in zip(values.tolist(), freq.tolist()):
                counts[v] = counts.get(v, 0) + c
        return counts

    def storage_cells(self) -> int:
        """Live label storage; constant for the lifetime of the registry."""
        return int(sum(labels.size for labels in self.current))

    def _check_params(self, params: NetworkParams) -> None:
        if params.layer_shapes() != [tuple(s) for s in self.layer_shapes]:
            raise ValueError("params shapes do not match the registry")

    # -- pruning -------------------------------------------------------------

    def first_prune(self, params: NetworkParams, task: int, ratio: float) -> PruneOutcome:
        """Commit the strongest free weights to ``task``; zero and release the rest.

        Candidates are exactly the label-0 weights.  Per layer, the
        ``ceil(ratio * candidates)`` smallest by |value| stay free with their
        values set to 0; the remainder get label ``+task``.  The post-pass
        label state is archived as the task's full-model snapshot.
        """
        self._check_params(params)
        if not 1 <= task <= self.n:
            raise LifecycleError(f"first pruning applies to preset tasks 1..{self.n}, got {task}")
        if task in self.archived_first:
            raise LifecycleError(f"task {task} was already pruned")

        plans = []
        for layer, labels in enumerate(self.current):
            flat_labels = labels.reshape(-1)
            flat_weights = params.weights[layer].reshape(-1)
            candidates = np.flatnonzero(flat_labels == 0)
            prune_count = count_from_ratio(ratio, candidates.size)
            kept_count = candidates.size - prune_count
            if kept_count <= 0:
                raise CapacityError(
                    f"layer {layer} has {candidates.size} free weights, "
                    f"ratio {ratio} leaves task {task} nothing to keep"
                )
            picked = _smallest_by_magnitude(flat_weights[candidates], prune_count)
            pruned_idx = candidates[picked]
            kept_mask = np.ones(candidates.size, dtype=bool)
            kept_mask[picked] = False
            kept_idx = candidates[kept_mask]
            threshold = float(np.min(np.abs(flat_weights[kept_idx])))
            plans.append((layer, pruned_idx, kept_idx, threshold))

        stats = []
        for layer, pruned_idx, kept_idx, threshold in plans:
            flat_labels = self.current[layer].reshape(-1)
            flat_weights = params.weights[layer].reshape(-1)
            flat_weights[pruned_idx] = 0.0
            flat_labels[kept_idx] = task
            stats.append(LayerPruneStats(layer, kept_idx.size, pruned_idx.size, threshold))
        self.archived_first[task] = self._snapshot()
        return PruneOutcome(task, "first", stats)

    def second_prune(self, params: NetworkParams, task: int, ratio: float) -> PruneOutcome:
        """Flag the weakest committed weights of ``task`` as reclaimable.

        Candidates are the ``+task`` weights.  The selected ones become
        ``-task`` and keep their values: they stay part of the task's full
        model until an additional task takes them over.
        """
        self._check_params(params)
        if task not in self.archived_first:
            raise LifecycleError(f"task {task} has no first-pruning snapshot yet")
        if task in self.archived_second:
            raise LifecycleError(f"task {task} was already second-pruned")

        plans = []
        for layer, labels in enumerate(self.current):
            flat_labels = labels.reshape(-1)
            flat_weights = params.weights[layer].reshape(-1)
            candidates = np.flatnonzero(flat_labels == task)
            if candidates.size == 0:
                raise CapacityError(f"layer {layer} holds no weights of task {task}")
            flag_count = count_from_ratio(ratio, candidates.size)
            picked = _smallest_by_magnitude(flat_weights[candidates], flag_count)
            flagged_idx = candidates[picked]
            kept = candidates.size - flag_count
            if kept > 0:
                kept_mask = np.ones(candidates.size, dtype=bool)
                kept_mask[picked] = False
                threshold = float(np.min(np.abs(flat_weights[candidates[kept_mask]])))
            else:
                threshold = float("inf")
            plans.append((layer, flagged_idx, kept, threshold))

        stats = []
        for layer, flagged_idx, kept, threshold in plans:
            flat_labels = self.current[layer].reshape(-1)
            flat_labels[flagged_idx] = -task
            stats.append(LayerPruneStats(layer, kept, flagged_idx.size, threshold))
        self.archived_second[task] = self._snapshot()
        return PruneOutcome(task, "second", stats)

    # -- reclamation ---------------------------------------------------------

    def reclaim_for_additional(
        self,
        params: NetworkParams,
        task: int,
        *,
        rng: np.random.Generator | None = None,
        policy: str = "reinit",
    ) -> int:
        """Hand every reclaimable weight of preset task ``task - n`` to ``task``.

        Labels flip from ``-(task - n)`` to ``+task`` in one shot; under the
        ``reinit`` policy the values restart from a seeded uniform draw in
        ``[-0.01, 0.01]``.  The donor task is marked cannibalized and can
        only be served through its minimum model afterwards.  Returns the
        number of weights reclaimed.
        """
        self._check_params(params)
        if policy not in RECLAIM_POLICIES:
            raise ValueError(f"unknown reclaim policy {policy!r}")
        if policy == "reinit" and rng is None:
            raise ValueError("the reinit policy needs a random stream")
        if task <= self.n:
            raise LifecycleError(f"task {task} is a preset task; reclamation is for tasks beyond {self.n}")
        donor = task - self.n
        if donor > self.n:
            raise ScalabilityExceededError(
                f"task {task} would need donor {donor}, but only {self.n} reclaimable pools exist"
            )
        if donor in self.cannibalized:
            raise DoubleReclaimError(f"the pool of task {donor} was already reclaimed")
        if donor not in self.archived_second:
            raise LifecycleError(f"preset task {donor} never finished its pruning passes")

        count = 0
        for layer, labels in enumerate(self.current):
            positions = labels == -donor
            taken = int(positions.sum())
            if taken == 0:
                continue
            labels[positions] = task
            if policy == "reinit":
                params.weights[layer][positions] = rng.uniform(-RECLAIM_INIT_SPAN, RECLAIM_INIT_SPAN, size=taken)
            count += taken
        self.cannibalized.add(donor)
        self.archived_first[task] = self._snapshot()
        return count

    # -- view composition ----------------------------------------------------

    def _reused_forward(
        self, task: int, reuse: ReuseRecord | None, committed_only: bool = False
    ) -> list[np.ndarray]:
        """Forward bitmaps of earlier-task weights visible to ``task``.

        Visibility follows the current labels: positions whose weights were
        reclaimed by a later task no longer carry the donor's label, so they
        drop out of every borrower's view automatically.  Minimum-model
        compositions pass ``committed_only`` so they never depend on borrowed
        reclaimable weights, which a later task may take away.
        """
        layers = [np.zeros(s, dtype=bool) for s in self.layer_shapes]
        if reuse is None:
            return layers
        for prev, muted_layers in reuse.muted.items():
            for layer, labels in enumerate(self.current):
                if committed_only:
                    owned_now = labels == prev
                else:
                    owned_now = np.abs(labels) == prev
                layers[layer] |= owned_now & ~muted_layers[layer]
        return layers

    def compose_view(self, task: int, mode: str, reuse: ReuseRecord | None = None) -> ParticipationView:
        """Inference view of a trained task: its own weights plus unmuted reuse.

        ``max`` includes reclaimable weights, own and borrowed alike, and no
        longer exists once the task is cannibalized.  ``min`` is the
        permanence guarantee: it is built solely from committed weights,
        which no later task can touch, so it replays identically forever.
        """
        if mode not in VIEW_MODES:
            raise ValueError(f"mode must be one of {VIEW_MODES}, got {mode!r}")
        if self.owned_count(task) == 0:
            raise LifecycleError(f"task {task} owns no weights yet; nothing to compose")
        if mode == "max" and task in self.cannibalized:
            raise StaleModelError(
                f"task {task} was cannibalized; its maximum model is stale, use the min view"
            )
        reused = self._reused_forward(task, reuse, committed_only=mode == "min")
        forward = []
        for layer, labels in enumerate(self.current):
            own = (np.abs(labels) == task) if mode == "max" else (labels == task)
            forward.append(own | reused[layer])
        trainable = [np.zeros(s, dtype=bool) for s in self.layer_shapes]
        return ParticipationView(forward, trainable, train_biases=False)

    def trainable_view(self, task: int, phase: str, reuse: ReuseRecord | None = None) -> ParticipationView:
        """Training view for one lifecycle phase of ``task``.

        ``initial`` trains the free pool, ``max_finetune`` the task's full
        set, ``min_finetune`` only its committed (positive) set.  The
        forward bitmap adds whatever earlier weights the reuse record left
        unmuted; the min phase borrows committed ones only, matching what
        the min view will replay.
        """
        if phase not in TRAIN_PHASES:
            raise ValueError(f"phase must be one of {TRAIN_PHASES}, got {phase!r}")
        if task in self.cannibalized:
            raise LifecycleError(f"task {task} was cannibalized and cannot train again")

        if phase == "initial":
            if task > self.n:
                raise LifecycleError("additional tasks train reclaimed weights, never the free pool")
            if self.owned_count(task) != 0:
                raise LifecycleError(f"task {task} already owns weights; the initial phase is over")
            trainable = [labels == 0 for labels in self.current]
        else:
            if self.owned_count(task) == 0:
                raise LifecycleError(f"task {task} owns nothing to fine-tune")
            if phase == "max_finetune":
                trainable = [np.abs(labels) == task for labels in self.current]
            else:
                trainable = [labels == task for labels in self.current]

        # the min cycles must optimize the exact model the min view replays
        reused = self._reused_forward(task, reuse, committed_only=phase == "min_finetune")
        forward = [t | r for t, r in zip(trainable, reused)]
        return ParticipationView(forward, trainable, train_biases=True)

    # -- validation ----------------------------------------------------------

    def check_invariants(self) -> list[str]:
        """Validate structural invariants; returns human-readable violations."""
        problems: list[str] = []
        limit = self.n + self.k

        for layer, labels in enumerate(self.current):
            bad = np.abs(labels) > limit
            for idx in np.flatnonzero(bad.reshape(-1)).tolist():
                problems.append(f"layer {layer} index {idx}: label outside task range")
            negative = labels < 0
            too_late = negative & (np.abs(labels) > self.n)
            for idx in np.flatnonzero(too_late.reshape(-1)).tolist():
                problems.append(f"layer {layer} index {idx}: reclaimable label on a non-preset task")

        for task in self.cannibalized:
            if task not in self.archived_second:
                problems.append(f"task {task} marked cannibalized without a second-pruning snapshot")
            for layer, labels in enumerate(self.current):
                for idx in np.flatnonzero((labels == -task).reshape(-1)).tolist():
                    problems.append(
                        f"layer {layer} index {idx}: reclaimable label of cannibalized task {task} survived"
                    )

        for task, snapshot in self.archived_second.items():
            first = self.archived_first.get(task)
            if first is None:
                problems.append(f"task {task} has a second snapshot but no first")
                continue
            heir = task + self.n
            for layer, (snap, labels) in enumerate(zip(snapshot, self.current)):
                flat_snap = snap.reshape(-1)
                flat_first = first[layer].reshape(-1)
                flat_now = labels.reshape(-1)
                committed = flat_snap == task
                drifted = committed & (flat_now != task)
                for idx in np.flatnonzero(drifted).tolist():
                    problems.append(
                        f"layer {layer} index {idx}: committed weight of task {task} changed label"
                    )
                flagged = flat_snap == -task
                legal_heir = task in self.cannibalized
                now = flat_now
                bad_flag = flagged & ~((now == -task) | (legal_heir & (now == heir)))
                for idx in np.flatnonzero(bad_flag).tolist():
                    problems.append(
                        f"layer {layer} index {idx}: reclaimable weight of task {task} has an illegal label"
                    )
                mismatch = (flat_first == task) != (np.abs(flat_snap) == task)
                for idx in np.flatnonzero(mismatch).tolist():
                    problems.append(
                        f"layer {layer} index {idx}: snapshots of task {task} disagree about ownership"
                    )
        return problems
