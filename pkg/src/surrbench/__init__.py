"""Surrogate benchmarks for algorithm configuration.

Train a quantile-forest performance model on logged target-algorithm
runs, serve its predictions behind the same evaluation interface the
real algorithm would answer, tune against it with desk-scale
configurators, and quantify how faithfully results transfer.
"""

from .backends import (
    Backend,
    DEFAULT_SPACE_TEXT,
    EvalResult,
    SurrogateBackend,
    SyntheticBackend,
    SyntheticSpec,
    par10_score,
    penalized_cost,
    truncate_runtime,
)
from .configurators import (
    CONFIGURATORS,
    Trajectory,
    TrajectoryPoint,
    export_dataset,
    ils,
    random_search,
    roar,
    smac_lite,
    validate_incumbents,
)
from .forest import ForestConfig, ForestError, QuantileForest, fit_forest
from .harness import (
    FidelityReport,
    QualityReport,
    QualityRow,
    SplitPlan,
    TimingSummary,
    compare,
    default_budget_grid,
    fidelity_to_json,
    loco_splits,
    loro_splits,
    model_quality,
    quality_to_json,
    write_json_report,
    write_quality_csv,
    write_trajectories_csv,
)
from .impute import ImputationReport, impute_censored, trunc_normal_mean
from .rundata import (
    DataError,
    Dataset,
    InstanceSet,
    RunRecord,
    RunStatus,
    build_matrix,
    ingest_runs,
    save_features_csv,
    save_runs_csv,
)
from .serving import (
    BenchmarkServer,
    RemoteBackend,
    RemoteError,
    serve_stdio,
    serve_tcp,
)
from .space import (
    ConfigurationSpace,
    SpaceError,
    SpaceParseError,
    canonical_config,
    parse_space,
    render_space,
)
from .stats import (
    Outcome,
    kruskal_wallis,
    pairwise_outcomes,
    rank_sum_test,
    rmse,
    spearman,
    surrogate_error,
)
from .surrogate import (
    ModelError,
    RunResult,
    SurrogateBenchmark,
    build_benchmark,
    load_benchmark,
    save_benchmark,
)

__version__ = "0.1.0"

__all__ = [
    "Backend",
    "BenchmarkServer",
    "CONFIGURATORS",
    "ConfigurationSpace",
    "DEFAULT_SPACE_TEXT",
    "DataError",
    "Dataset",
    "EvalResult",
    "FidelityReport",
    "ForestConfig",
    "ForestError",
    "ImputationReport",
    "InstanceSet",
    "ModelError",
    "Outcome",
    "QualityReport",
    "QualityRow",
    "QuantileForest",
    "RemoteBackend",
    "RemoteError",
    "RunRecord",
    "RunResult",
    "RunStatus",
    "SpaceError",
    "SpaceParseError",
    "SplitPlan",
    "SurrogateBackend",
    "SurrogateBenchmark",
    "SyntheticBackend",
    "SyntheticSpec",
    "TimingSummary",
    "Trajectory",
    "TrajectoryPoint",
    "build_benchmark",
    "build_matrix",
    "canonical_config",
    "compare",
    "default_budget_grid",
    "export_dataset",
    "fidelity_to_json",
    "fit_forest",
    "ils",
    "impute_censored",
    "ingest_runs",
    "kruskal_wallis",
    "load_benchmark",
    "loco_splits",
    "loro_splits",
    "model_quality",
    "pairwise_outcomes",
    "par10_score",
    "parse_space",
    "penalized_cost",
    "quality_to_json",
    "random_search",
    "rank_sum_test",
    "render_space",
    "rmse",
    "roar",
    "save_benchmark",
    "save_features_csv",
    "save_runs_csv",
    "serve_stdio",
    "serve_tcp",
    "smac_lite",
    "spearman",
    "surrogate_error",
    "trunc_normal_mean",
    "truncate_runtime",
    "validate_incumbents",
    "write_json_report",
    "write_quality_csv",
    "write_trajectories_csv",
]
