"""maskdec: masked-sequence decoding engine and scheduler lab.

Decoding runs a pluggable mask predictor against a transition scheduler
(sequential greedy, top-k, confidence threshold, or anchor-guided
localleap) under left-to-right block discipline, records every step into
a replayable trace, and ships analysis plus brute-force certification
tooling for the parallel-commit safety conditions.
"""

from .core import (
    CommitSet,
    DecodeTrace,
    SchedulerConfig,
    SequenceState,
    StepPredictions,
    TraceMeta,
    TraceStep,
    Vocab,
    active_block,
    new_state,
    read_trace,
    trace_from_lines,
    trace_to_lines,
    write_trace,
)
from .engine import RunMetrics, compare_runs, decode
from .predictors import (
    JointModel,
    JointPredictor,
    PlantedConfig,
    PlantedPredictor,
    ReplayPredictor,
    joint_predict,
    load_joint_model,
    planted_predict,
    planted_target,
    replay_predict,
    save_joint_model,
)
from .schedulers import (
    ClusterReport,
    select_localleap,
    select_sequential,
    select_threshold,
    select_topk,
)

__version__ = "0.1.0"

__all__ = [
    "CommitSet",
    "ClusterReport",
    "DecodeTrace",
    "JointModel",
    "JointPredictor",
    "PlantedConfig",
    "PlantedPredictor",
    "ReplayPredictor",
    "RunMetrics",
    "SchedulerConfig",
    "SequenceState",
    "StepPredictions",
    "TraceMeta",
    "TraceStep",
    "Vocab",
    "active_block",
    "compare_runs",
    "decode",
    "joint_predict",
    "load_joint_model",
    "new_state",
    "planted_predict",
    "planted_target",
    "read_trace",
    "replay_predict",
    "save_joint_model",
    "select_localleap",
    "select_sequential",
    "select_threshold",
    "select_topk",
    "trace_from_lines",
    "trace_to_lines",
    "write_trace",
]
