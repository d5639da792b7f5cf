"""netcurves: threshold-indexed graph-feature curves from individual-specific
networks, and outcome models over them.

Per-subject correlation networks are sparsified at every threshold of a grid
on [0, 1]; a graph feature (clustering coefficient or characteristic path
length) evaluated along the grid gives one curve per subject.  Five
sklearn-style regressors parametrize how the thresholds are weighted when
predicting an outcome from those curves, with cross-validated evaluation and
a plasmode-style simulation harness alongside.
"""

__version__ = "0.1.0"

from .data import CurveDataset, split_design
from .evaluation import (
    PerformanceReport,
    calibration_slope,
    cross_validate,
    monte_carlo_se,
    percentile_summary,
    r_squared,
    relative_rmspe,
    rmspe,
)
from .graphs import (
    BinaryGraph,
    characteristic_path_length,
    check_adjacency,
    clustering_coefficient,
    feature_curve,
    feature_curves,
    from_correlation,
    threshold_density,
    threshold_weight,
)
from .grid import default_grid, default_subset, make_grid
from .models import (
    AverageFeatureRegressor,
    FixedWeightRegressor,
    FlexWeightRegressor,
    MeanOnlyRegressor,
    OptimalThresholdRegressor,
    StandardizedWeightCurve,
    WeightCurve,
    fit_to_dict,
    make_model,
    standardized_weight,
)
from .simulation import (
    ContaminationSpec,
    MatrixPool,
    OutcomeModel,
    ScenarioConfig,
    ScenarioError,
    SyntheticMatrices,
    calibrate_sigma,
    contaminate_correlation,
    functional_weight,
    generate_outcomes,
    ogm_target,
    run_replicate,
    run_scenario,
    synth_correlation,
    true_weight_curve,
)
from .splines import (
    PenalizedFit,
    RankDeficientError,
    SplineBasis,
    build_basis,
    default_lambda_grid,
    difference_penalty,
    penalized_ls,
    select_lambda_gcv,
)

__all__ = [
    "__version__",
    "AverageFeatureRegressor",
    "BinaryGraph",
    "ContaminationSpec",
    "CurveDataset",
    "FixedWeightRegressor",
    "FlexWeightRegressor",
    "MatrixPool",
    "MeanOnlyRegressor",
    "OptimalThresholdRegressor",
    "OutcomeModel",
    "PenalizedFit",
    "PerformanceReport",
    "RankDeficientError",
    "ScenarioConfig",
    "ScenarioError",
    "SplineBasis",
    "StandardizedWeightCurve",
    "SyntheticMatrices",
    "WeightCurve",
    "build_basis",
    "calibrate_sigma",
    "calibration_slope",
    "characteristic_path_length",
    "check_adjacency",
    "clustering_coefficient",
    "contaminate_correlation",
    "cross_validate",
    "default_grid",
    "default_lambda_grid",
    "default_subset",
    "difference_penalty",
    "feature_curve",
    "feature_curves",
    "fit_to_dict",
    "from_correlation",
    "functional_weight",
    "generate_outcomes",
    "make_grid",
    "make_model",
    "monte_carlo_se",
    "ogm_target",
    "penalized_ls",
    "percentile_summary",
    "r_squared",
    "relative_rmspe",
    "rmspe",
    "run_replicate",
    "run_scenario",
    "select_lambda_gcv",
    "split_design",
    "standardized_weight",
    "synth_correlation",
    "threshold_density",
    "threshold_weight",
    "true_weight_curve",
]
