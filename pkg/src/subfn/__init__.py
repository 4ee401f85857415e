"""Unreliability scores for ReLU networks from activation-region error bounds."""

__version__ = "0.1.0"

from .bound import (
    FittedScorer,
    ScoreReport,
    SyntheticRegionWorld,
    density,
    fit,
    load_scorer,
    oracle_fit,
    save_scorer,
    score,
    score_batch,
    smooth_error,
    validate_concentration_bound,
)
from .evaluation import (
    EvalCurve,
    ScoredSample,
    entropy_score,
    margin_score,
    max_response_score,
    summarize,
    sweep,
)
from .kernel import (
    LogBinomTable,
    WeightingSpec,
    log_sum_exp,
    log_weight,
    make_log_binom,
    make_weighting,
)
from .net import (
    LabeledDataset,
    MlpModel,
    TrainConfig,
    capture_pattern,
    forward,
    load_model,
    make_halfmoons,
    make_mlp,
    save_model,
    train_sgd,
)
from .patterns import (
    ActivationPattern,
    PatternRecord,
    RegionIndex,
    build_region_index,
    hamming,
    read_patterns,
    write_patterns,
)

__all__ = [
    "__version__",
    "ActivationPattern",
    "EvalCurve",
    "FittedScorer",
    "LabeledDataset",
    "LogBinomTable",
    "MlpModel",
    "PatternRecord",
    "RegionIndex",
    "ScoreReport",
    "ScoredSample",
    "SyntheticRegionWorld",
    "TrainConfig",
    "WeightingSpec",
    "build_region_index",
    "capture_pattern",
    "density",
    "entropy_score",
    "fit",
    "forward",
    "hamming",
    "load_model",
    "load_scorer",
    "log_sum_exp",
    "log_weight",
    "make_halfmoons",
    "make_log_binom",
    "make_mlp",
    "make_weighting",
    "margin_score",
    "max_response_score",
    "oracle_fit",
    "read_patterns",
    "save_model",
    "save_scorer",
    "score",
    "score_batch",
    "smooth_error",
    "summarize",
    "sweep",
    "train_sgd",
    "validate_concentration_bound",
    "write_patterns",
]
