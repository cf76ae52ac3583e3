"""Sequential task learning with parameter isolation and capacity reuse.

``run_sequence`` drives one model through ``n`` preset tasks and up to ``k``
additional tasks.  Preset tasks train the free weight pool, then pass
through both pruning stages and a cyclic fine-tune that alternates between
the task's minimum and maximum model (minimum first).  Additional tasks
never prune: each one takes over the reclaimable pool of its donor preset
task and fine-tunes only those weights.

Once a task is archived its committed weights are never updated again, so
re-evaluating any earlier task replays bit-identical predictions for as
long as its weight view survives unchanged.
"""

from __future__ import annotations

import json
import logging
import time
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from .maskstore import MaskRegistry, RECLAIM_POLICIES, ReuseRecord
from .metrics import ScoreMatrix
from .neuralcore import (
    NetworkParams,
    OptimizerState,
    build_layer_specs,
    predict,
    train_epochs,
)
from .relevance import RelevanceReport, relevance_guided_reuse, srcc
from .seeding import stream
from .tasksuite import Dataset

log = logging.getLogger(__name__)

PROBE_SIZE = 64
BASELINE_MODES = ("SL", "NO-RL", "NO-RR")


class EngineError(RuntimeError):
    """A failure during the run, tagged with the task and phase it hit."""

    def __init__(self, task: int, phase: str, cause: BaseException):
        super().__init__(f"task {task} phase {phase}: {cause}")
        self.task = task
        self.phase = phase


@dataclass
class OptimizerSettings:
    base_lr: float = 0.05
    decay_factor: float = 0.5
    decay_every: int = 20

    def fresh_state(self) -> OptimizerState:
        return OptimizerState(self.base_lr, self.decay_factor, self.decay_every)


@dataclass
class SequenceConfig:
    n: int
    k: int
    first_ratios: list[float]
    second_ratios: list[float]
    reuse_lambda: float = 0.5
    epochs_initial: int = 80
    epochs_cycle: int = 20
    cycles: int = 2
    batch_size: int = 32
    seed: int = 0
    reclaim_policy: str = "reinit"
    hidden_dims: tuple[int, ...] = (32, 16)
    optimizer: OptimizerSettings = field(default_factory=OptimizerSettings)

    def validate(self) -> None:
        if self.n < 1:
            raise ValueError("n must be at least 1")
        if self.k < 0 or self.k > self.n:
            raise ValueError(f"k must satisfy 0 <= k <= n, got k={self.k} n={self.n}")
        if len(self.first_ratios) != self.n or len(self.second_ratios) != self.n:
            raise ValueError("need one first and one second pruning ratio per preset task")
        for name, ratios in (("first", self.first_ratios), ("second", self.second_ratios)):
            for r in ratios:
                if not 0.0 <= r < 1.0:
                    raise ValueError(f"{name} pruning ratios must lie in [0, 1), got {r}")
        if self.first_ratios[-1] != 0.0:
            log.warning(
                "last first-pruning ratio is %s; free weights will remain after the preset stage",
                self.first_ratios[-1],
            )
        if not 0.0 <= self.reuse_lambda <= 1.0:
            raise ValueError("lambda must lie in [0, 1]")
        if self.epochs_initial < 1 or self.epochs_cycle < 1:
            raise ValueError("epoch counts must be positive")
        if self.cycles < 0:
            raise ValueError("cycles must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must fit an unsigned 64-bit integer")
        if self.reclaim_policy not in RECLAIM_POLICIES:
            raise ValueError(f"reclaim_policy must be one of {RECLAIM_POLICIES}")
        if not self.hidden_dims or any(h < 1 for h in self.hidden_dims):
            raise ValueError("hidden_dims must be positive")
        self.optimizer.fresh_state()  # validates the optimizer fields

    def to_payload(self) -> dict:
        return {
            "n": self.n,
            "k": self.k,
            "first_ratios": list(self.first_ratios),
            "second_ratios": list(self.second_ratios),
            "lambda": self.reuse_lambda,
            "epochs_initial": self.epochs_initial,
            "epochs_cycle": self.epochs_cycle,
            "cycles": self.cycles,
            "batch_size": self.batch_size,
            "seed": self.seed,
            "reclaim_policy": self.reclaim_policy,
            "hidden_dims": list(self.hidden_dims),
            "optimizer": {
                "base_lr": self.optimizer.base_lr,
                "decay_factor": self.optimizer.decay_factor,
                "decay_every": self.optimizer.decay_every,
            },
        }


@dataclass
class TaskRecord:
    task: int
    stage: str  # "preset" or "additional"
    dataset_id: str
    reuse: ReuseRecord | None
    bias_snapshot: list[np.ndarray]
    probe_inputs: np.ndarray
    probe_max: np.ndarray
    probe_min: np.ndarray
    reclaimed_count: int | None = None
    # wall-clock only; deliberately left out of the checkpoint bytes so two
    # identical runs serialize identically
    completed_at: float | None = None


@dataclass
class Checkpoint:
    params: NetworkParams
    registry: MaskRegistry
    records: dict[int, TaskRecord]
    config_json: str
    config_hash: str

    def trained_tasks(self) -> list[int]:
        return sorted(self.records)


@dataclass
class RunResult:
    checkpoint: Checkpoint | None
    score_matrix: ScoreMatrix
    relevance_reports: list[RelevanceReport]
    phase_seconds: dict[str, float] = field(default_factory=dict)
    storage_log: list[tuple[int, int, int]] = field(default_factory=list)


def canonical_config_json(config: SequenceConfig) -> str:
    return json.dumps(config.to_payload(), sort_keys=True, separators=(",", ":"))


def config_hash_of(config_json: str) -> str:
    import hashlib

    return hashlib.sha256(config_json.encode("utf-8")).hexdigest()


@contextmanager
def _phase(result: RunResult, task: int, phase: str):
    start = time.monotonic()
    try:
        yield
    except EngineError:
        raise
    except BaseException as exc:
        raise EngineError(task, phase, exc) from exc
    finally:
        result.phase_seconds[f"task_{task}/{phase}"] = time.monotonic() - start


def _mode_for(registry: MaskRegistry, task: int) -> str:
    return "min" if task in registry.cannibalized else "max"


def evaluate_task(
    checkpoint: Checkpoint,
    task: int,
    dataset: Dataset,
    split: str = "test",
    mode: str | None = None,
) -> float:
    """SRCC of a trained task on one split of its dataset.

    Without an explicit mode the task's currently valid view is used: the
    full model normally, the minimum model once the task was cannibalized.
    """
    record = checkpoint.records.get(task)
    if record is None:
        raise LookupError(f"task {task} is not part of this checkpoint")
    if split not in ("train", "test"):
        raise ValueError("split must be 'train' or 'test'")
    registry = checkpoint.registry
    if mode is None:
        mode = _mode_for(registry, task)
    view = registry.compose_view(task, mode, reuse=record.reuse)
    X, y = dataset.train_arrays() if split == "train" else dataset.test_arrays()
    preds = predict(checkpoint.params.with_biases(record.bias_snapshot), view, X)
    return srcc(preds, y)


def probe_predictions(checkpoint: Checkpoint, task: int, mode: str) -> np.ndarray:
    """Replay the stored probe inputs of a task through its current view."""
    record = checkpoint.records[task]
    view = checkpoint.registry.compose_view(task, mode, reuse=record.reuse)
    return predict(checkpoint.params.with_biases(record.bias_snapshot), view, record.probe_inputs)


def cyclic_finetune(
    params: NetworkParams,
    registry: MaskRegistry,
    task: int,
    dataset: Dataset,
    config: SequenceConfig,
    reuse: ReuseRecord | None = None,
    *,
    pre_phase_hook=None,
) -> NetworkParams:
    """Alternate fine-tuning of the minimum and maximum model, minimum first.

    Each leg runs ``epochs_cycle`` epochs with a fresh optimizer schedule.
    Only the task's own weights (and its private biases) change; with
    ``cycles == 0`` the parameters come back untouched.
    """
    if task <= registry.n and task not in registry.archived_second:
        raise RuntimeError(f"task {task} must finish both pruning passes before cyclic fine-tuning")
    X, y = dataset.train_arrays()
    for cycle in range(config.cycles):
        for mode, phase in (("min", "min_finetune"), ("max", "max_finetune")):
            if pre_phase_hook is not None:
                pre_phase_hook(f"cycle_{cycle}_{mode}")
            view = registry.trainable_view(task, phase, reuse=reuse)
            train_epochs(
                params,
                view,
                X,
                y,
                config.optimizer.fresh_state(),
                config.epochs_cycle,
                rng=stream(config.seed, "task", task, "cycle", cycle, mode),
                batch_size=config.batch_size,
            )
    return params


def run_sequence(
    config: SequenceConfig,
    datasets: list[Dataset],
    *,
    out_path=None,
    lambda_override: float | None = None,
    config_json: str | None = None,
) -> RunResult:
    """Train the full task sequence and score every task after every task.

    ``out_path`` (a checkpoint file path) enables partial checkpoint writes
    before each training phase, so an aborted run leaves a loadable state
    behind.  ``lambda_override`` substitutes the reuse constant without
    touching the recorded config; the no-relevance baseline uses 0.
    """
    from .checkpoint import save_checkpoint

    config.validate()
    total = config.n + config.k
    if len(datasets) != total:
        raise ValueError(f"need {total} datasets, got {len(datasets)}")
    input_dim = datasets[0].inputs.shape[1]
    for i, ds in enumerate(datasets, start=1):
        if ds.inputs.shape[1] != input_dim:
            raise ValueError(f"dataset {i} input width differs from dataset 1")

    if config_json is None:
        config_json = canonical_config_json(config)
    lam = config.reuse_lambda if lambda_override is None else lambda_override

    specs = build_layer_specs(input_dim, config.hidden_dims)
    params = NetworkParams.init_random(specs, stream(config.seed, "net-init"))
    registry = MaskRegistry.for_params(params, config.n, config.k)
    checkpoint = Checkpoint(params, registry, {}, config_json, config_hash_of(config_json))
    result = RunResult(checkpoint, ScoreMatrix(), [])

    def save_partial(tag: str) -> None:
        if out_path is not None:
            save_checkpoint(checkpoint, out_path)
            log.debug("partial checkpoint before %s", tag)

    for task in range(1, total + 1):
        dataset = datasets[task - 1]
        X_train, y_train = dataset.train_arrays()
        stage = "preset" if task <= config.n else "additional"
        log.info("task %d (%s): starting", task, stage)

        reuse: ReuseRecord | None = None
        if task >= 2:
            with _phase(result, task, "relevance"):
                reuse, report = relevance_guided_reuse(
                    registry,
                    params,
                    X_train,
                    y_train,
                    task,
                    lam,
                    records={t: r.reuse for t, r in checkpoint.records.items() if r.reuse is not None},
                    biases={t: r.bias_snapshot for t, r in checkpoint.records.items()},
                )
                result.relevance_reports.append(report)

        if stage == "preset":
            with _phase(result, task, "train_initial"):
                save_partial(f"task {task} initial training")
                view = registry.trainable_view(task, "initial", reuse=reuse)
                train_epochs(
                    params,
                    view,
                    X_train,
                    y_train,
                    config.optimizer.fresh_state(),
                    config.epochs_initial,
                    rng=stream(config.seed, "task", task, "train-initial"),
                    batch_size=config.batch_size,
                )
            with _phase(result, task, "first_prune"):
                registry.first_prune(params, task, config.first_ratios[task - 1])
            with _phase(result, task, "second_prune"):
                registry.second_prune(params, task, config.second_ratios[task - 1])
            with _phase(result, task, "cyclic_finetune"):
                cyclic_finetune(
                    params,
                    registry,
                    task,
                    dataset,
                    config,
                    reuse,
                    pre_phase_hook=lambda tag: save_partial(f"task {task} {tag}"),
                )
            reclaimed = None
        else:
            with _phase(result, task, "reclaim"):
                reclaimed = registry.reclaim_for_additional(
                    params,
                    task,
                    rng=stream(config.seed, "task", task, "reclaim"),
                    policy=config.reclaim_policy,
                )
                log.info("task %d reclaimed %d weights from task %d", task, reclaimed, task - config.n)
            with _phase(result, task, "train_additional"):
                save_partial(f"task {task} fine-tuning")
                view = registry.trainable_view(task, "max_finetune", reuse=reuse)
                train_epochs(
                    params,
                    view,
                    X_train,
                    y_train,
                    config.optimizer.fresh_state(),
                    config.epochs_initial,
                    rng=stream(config.seed, "task", task, "train-additional"),
                    batch_size=config.batch_size,
                )

        with _phase(result, task, "archive"):
            record = TaskRecord(
                task=task,
                stage=stage,
                dataset_id=f"task_{task}",
                reuse=reuse,
                bias_snapshot=params.bias_copy(),
                probe_inputs=stream(config.seed, "probe", task).uniform(
                    -1.0, 1.0, size=(PROBE_SIZE, input_dim)
                ),
                probe_max=np.empty(0),
                probe_min=np.empty(0),
                reclaimed_count=reclaimed,
                completed_at=time.time(),
            )
            checkpoint.records[task] = record
            record.probe_max = probe_predictions(checkpoint, task, "max")
            record.probe_min = probe_predictions(checkpoint, task, "min")

        with _phase(result, task, "evaluate"):
            row = [evaluate_task(checkpoint, j, datasets[j - 1]) for j in range(1, task + 1)]
            result.score_matrix.append_row(row)
            result.storage_log.append((task, params.weight_count(), registry.storage_cells()))
        log.info("task %d done; diagonal srcc %.4f", task, row[-1])

    problems = registry.check_invariants()
    if problems:
        raise EngineError(total, "final_invariants", RuntimeError("; ".join(problems)))
    if out_path is not None:
        save_checkpoint(checkpoint, out_path)
    return result


def _train_plain(
    params: NetworkParams,
    X: np.ndarray,
    y: np.ndarray,
    config: SequenceConfig,
    rng: np.random.Generator,
) -> NetworkParams:
    from .neuralcore import ParticipationView

    view = ParticipationView.full(params, train_biases=True)
    return train_epochs(
        params,
        view,
        X,
        y,
        config.optimizer.fresh_state(),
        config.epochs_initial,
        rng=rng,
        batch_size=config.batch_size,
    )


def run_baseline(
    config: SequenceConfig,
    datasets: list[Dataset],
    mode: str,
    *,
    out_path=None,
    config_json: str | None = None,
) -> RunResult:
    """Reference training regimes to compare the framework against.

    SL trains an independent model per task; NO-RL fine-tunes one shared
    model on every task with nothing frozen; NO-RR is the full pipeline
    with the reuse constant forced to zero (relevance never mutes).
    """
    from .neuralcore import ParticipationView

    if mode not in BASELINE_MODES:
        raise ValueError(f"baseline mode must be one of {BASELINE_MODES}, got {mode!r}")
    if mode == "NO-RR":
        return run_sequence(
            config, datasets, out_path=out_path, lambda_override=0.0, config_json=config_json
        )

    config.validate()
    total = config.n + config.k
    if len(datasets) != total:
        raise ValueError(f"need {total} datasets, got {len(datasets)}")
    input_dim = datasets[0].inputs.shape[1]
    specs = build_layer_specs(input_dim, config.hidden_dims)
    matrix = ScoreMatrix()
    result = RunResult(None, matrix, [])

    if mode == "SL":
        models: list[NetworkParams] = []
        for task in range(1, total + 1):
            with _phase(result, task, "train"):
                model = NetworkParams.init_random(specs, stream(config.seed, "sl", task, "init"))
                X, y = datasets[task - 1].train_arrays()
                _train_plain(model, X, y, config, stream(config.seed, "sl", task, "train"))
                models.append(model)
            with _phase(result, task, "evaluate"):
                row = []
                for j in range(1, task + 1):
                    Xt, yt = datasets[j - 1].test_arrays()
                    row.append(srcc(predict(models[j - 1], ParticipationView.full(models[j - 1]), Xt), yt))
                matrix.append_row(row)
        return result

    # NO-RL: one model, full retraining on every task
    params = NetworkParams.init_random(specs, stream(config.seed, "net-init"))
    for task in range(1, total + 1):
        with _phase(result, task, "train"):
            X, y = datasets[task - 1].train_arrays()
            _train_plain(params, X, y, config, stream(config.seed, "norl", task, "train"))
        with _phase(result, task, "evaluate"):
            row = []
            for j in range(1, task + 1):
                Xt, yt = datasets[j - 1].test_arrays()
                row.append(srcc(predict(params, ParticipationView.full(params), Xt), yt))
            matrix.append_row(row)
    return result
