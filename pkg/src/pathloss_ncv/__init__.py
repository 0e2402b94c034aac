from pathloss_ncv.config import RunConfig, validate_config  # noqa: F401
from pathloss_ncv.data_pipeline import (  # noqa: F401
    apply_normalizer,
    denormalize,
    fit_normalizer,
    generate_synthetic,
    load_csv,
    save_csv,
    split_rows,
)
from pathloss_ncv.metrics import (  # noqa: F401
    aggregate_folds,
    evaluate,
    mae,
    mse,
    relative_difference,
)
from pathloss_ncv.nested_cv import (  # noqa: F401
    EvaluationReport,
    FoldPlan,
    SearchResult,
    inner_select,
    leaky_evaluate,
    make_fold_plan,
    outer_evaluate,
    run_benchmark,
)
from pathloss_ncv.regressors.families import (  # noqa: F401
    EstimatorSpec,
    GridPoint,
    ModelFamily,
    register_family,
)
from pathloss_ncv.report import emit_charts, emit_table  # noqa: F401
from pathloss_ncv.types import (  # noqa: F401
    Dataset,
    FunctionInfo,
    MetricPair,
    NormalizationParams,
    Parameters,
    PredictionSet,
    ProcessingStep,
    ProcessingType,
    Sample,
    SyntheticConfig,
)
