"""Movie attendance modeling from trailer content and viewing history.

The package trains a hybrid recommender whose movie representation is a
learned projection of pooled trailer-frame features plus a per-movie offset,
letting one model score both catalog titles and unreleased ones. Frequency
and recency baselines, a matrix-factorization baseline, sampled-negative AUC
evaluation, comparable-movie tables, and a synthetic data generator with
known ground truth round out the workflow. Everything is reachable from the
``marquee`` command line.
"""

from .data import (
    AttendanceIndex,
    AttendanceRecord,
    DatasetSplit,
    DemographicsSchema,
    LabeledPair,
    UserProfile,
    load_attendance,
    load_split,
    sample_eval_set,
    sample_training_batch,
    save_split,
    split_dataset,
)
from .errors import (
    ColdStartUnsupportedError,
    ConfigError,
    DataFormatError,
    EvaluationError,
    MarqueeError,
    MissingOffsetError,
    SamplingError,
    SchemaError,
    ShapeError,
    StateError,
    TrainingError,
)
from .evaluation import EvalReport, auc, evaluate_coldstart, evaluate_in_matrix
from .model import (
    MODE_COLD_START,
    MODE_IN_MATRIX,
    Featurizer,
    HybridParams,
    HybridScorer,
    ScoreBreakdown,
    TrainConfig,
    Trainer,
    TrainResult,
    build_featurizer,
    movie_vector,
    predict_probability,
    score_pair,
    score_pairs_batch,
    train,
    user_vector,
)
from .synth import SynthConfig, SynthWorld, build_world, simulate
from .videovec import FrameFeatureSet, VideoVector, pool_frames

__version__ = "0.1.0"

__all__ = [
    "AttendanceIndex",
    "AttendanceRecord",
    "ColdStartUnsupportedError",
    "ConfigError",
    "DataFormatError",
    "DatasetSplit",
    "DemographicsSchema",
    "EvalReport",
    "EvaluationError",
    "Featurizer",
    "FrameFeatureSet",
    "HybridParams",
    "HybridScorer",
    "LabeledPair",
    "MarqueeError",
    "MissingOffsetError",
    "MODE_COLD_START",
    "MODE_IN_MATRIX",
    "SamplingError",
    "SchemaError",
    "ScoreBreakdown",
    "ShapeError",
    "StateError",
    "SynthConfig",
    "SynthWorld",
    "TrainConfig",
    "TrainResult",
    "Trainer",
    "TrainingError",
    "UserProfile",
    "VideoVector",
    "auc",
    "build_featurizer",
    "build_world",
    "evaluate_coldstart",
    "evaluate_in_matrix",
    "load_attendance",
    "load_split",
    "movie_vector",
    "pool_frames",
    "predict_probability",
    "sample_eval_set",
    "sample_training_batch",
    "save_split",
    "score_pair",
    "score_pairs_batch",
    "simulate",
    "split_dataset",
    "train",
    "user_vector",
]
