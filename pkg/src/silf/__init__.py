"""Scalable incremental learning on a single fixed-capacity network.

Tasks arrive one at a time.  Each preset task claims a slice of the free
weights through two magnitude-pruning stages, leaving behind a maximum
model (all its weights) and a minimum model (the weights that survived
the second stage).  Additional tasks beyond the preset budget reclaim the
weights the second stage marked expendable.  New tasks rank earlier tasks
by how well their frozen models already predict the new data (SRCC) and
mute the least useful borrowed weights before fine-tuning.
"""

from .checkpoint import (
    CheckpointFormatError,
    NotACheckpointError,
    load_checkpoint,
    save_checkpoint,
)
from .config import ConfigError, RunSetup, build_datasets, load_config, parse_config
from .engine import (
    Checkpoint,
    EngineError,
    OptimizerSettings,
    RunResult,
    SequenceConfig,
    TaskRecord,
    config_hash_of,
    cyclic_finetune,
    evaluate_task,
    probe_predictions,
    run_baseline,
    run_sequence,
)
from .maskstore import (
    CapacityError,
    DoubleReclaimError,
    LifecycleError,
    MaskError,
    MaskRegistry,
    PruneOutcome,
    ReuseRecord,
    ScalabilityExceededError,
    StaleModelError,
    count_from_ratio,
)
from .metrics import (
    MatrixFormatError,
    ScoreMatrix,
    UndefinedMetricError,
    average_accuracy,
    average_forgetting,
    average_plasticity,
    metrics_payload,
    stage_summary,
)
from .neuralcore import (
    LayerSpec,
    NetworkParams,
    NumericsError,
    OptimizerState,
    ParticipationView,
    ShapeError,
    backward,
    build_layer_specs,
    forward,
    l1_loss,
    predict,
    sgd_step,
    train_epochs,
)
from .relevance import (
    RelevanceReport,
    RelevanceRow,
    UndefinedCorrelationError,
    plan_muting,
    rank_with_ties,
    relevance_guided_reuse,
    reuse_ratio,
    srcc,
)
from .seeding import child_seed, stream
from .tasksuite import (
    Dataset,
    GenerationError,
    ParseError,
    SyntheticTaskSpec,
    TaskSpecError,
    default_suite,
    generate,
    load_csv,
    repeat_splits,
    resplit,
    save_csv,
    targets_on,
)

__version__ = "0.1.0"
