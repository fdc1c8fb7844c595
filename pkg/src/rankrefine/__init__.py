"""Post-hoc refinement of regression predictions with pairwise-ranking evidence.

A trained regressor's point estimate and variance are fused with a second
estimate recovered from "is the query above this reference?" comparisons:
the comparisons are fit with a Bradley-Terry likelihood whose curvature
gives the rank estimate a variance, and the two estimates are combined by
inverse-variance weighting. The package also ships the simulated-ranker
experiment protocols, two baseline refiners, and a small bagged regression
forest that reports honest ensemble variances.
"""

from .baselines import FeasibleInterval, projection_refine, rbr_refine
from .core import (
    ComparisonOutcome,
    ComparisonSet,
    Dataset,
    LabeledReference,
    ReferenceSet,
    RegressorEstimate,
    SplitSpec,
    beta,
    load_dataset_csv,
    load_references_csv,
    mae,
    pra,
    resplit,
    save_dataset_csv,
)
from .errors import (
    DataError,
    NumericError,
    RankRefineError,
    TransportError,
    ValidationError,
)
from .forest import (
    ForestConfig,
    TrainedForest,
    fit,
    load_forest,
    predict_with_variance,
    save_forest,
)
from .fusion import (
    FusedEstimate,
    fuse,
    mae_of_sigma,
    regularize_rank_variance,
    required_rank_variance,
)
from .rank import (
    RankEstimate,
    SolverConfig,
    bt_nll,
    fisher_variance,
    solve_rank_estimate,
)
from .rankers import (
    LlmRankerConfig,
    OracleRankerConfig,
    ReplayTransport,
    generate_comparisons,
    interactive_rank,
    llm_rank_batch,
    load_comparisons_csv,
    oracle_compare,
    save_comparisons_csv,
)
from .experiments import (
    SweepGrid,
    SweepRecord,
    make_synthetic_dataset,
    run_baseline_delta,
    run_noise_sweep,
    run_oracle_sweep,
    validate_bound,
)

__version__ = "0.1.0"

__all__ = [
    "ComparisonOutcome",
    "ComparisonSet",
    "Dataset",
    "DataError",
    "FeasibleInterval",
    "ForestConfig",
    "FusedEstimate",
    "LabeledReference",
    "LlmRankerConfig",
    "NumericError",
    "OracleRankerConfig",
    "RankEstimate",
    "RankRefineError",
    "ReferenceSet",
    "RegressorEstimate",
    "ReplayTransport",
    "SolverConfig",
    "SplitSpec",
    "SweepGrid",
    "SweepRecord",
    "TrainedForest",
    "TransportError",
    "ValidationError",
    "beta",
    "bt_nll",
    "fisher_variance",
    "fit",
    "fuse",
    "generate_comparisons",
    "interactive_rank",
    "llm_rank_batch",
    "load_comparisons_csv",
    "load_dataset_csv",
    "load_forest",
    "load_references_csv",
    "mae",
    "mae_of_sigma",
    "make_synthetic_dataset",
    "oracle_compare",
    "pra",
    "predict_with_variance",
    "projection_refine",
    "rbr_refine",
    "regularize_rank_variance",
    "required_rank_variance",
    "resplit",
    "run_baseline_delta",
    "run_noise_sweep",
    "run_oracle_sweep",
    "save_comparisons_csv",
    "save_dataset_csv",
    "save_forest",
    "solve_rank_estimate",
    "validate_bound",
]
