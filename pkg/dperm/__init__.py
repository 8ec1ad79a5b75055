"""dperm - differentially private empirical risk minimization.

Gradient-perturbation optimizers (DP-SVRG, DP-SVRG++, DP-GD, DP-AccMD) with
Gaussian noise calibration, plus a harness that runs privacy-utility
experiments and writes plot-ready results.

Example:
    from dperm import (
        Algorithm, ErmObjective, LossModel, PrivacyBudget, Regularizer,
        SvrgConfig, calibrate, dp_svrg, synth_logistic,
    )

    data = synth_logistic(2000, 10, seed=0)
    obj = ErmObjective(data, LossModel.for_dataset("logistic", data), Regularizer.squared_l2(0.01))
    plan = calibrate(Algorithm.DP_SVRG, G=1.0, n=data.n, budget=PrivacyBudget(1.0, 1e-5),
                     mode="moments", T=10, m=500)
    x, trace = dp_svrg(obj, SvrgConfig(T=10, m=500, eta=1 / (48 * obj.smoothness), noise=plan), rng=0)
"""

from importlib.metadata import version as _get_version

from dperm._components import AggregateTable, NoisePlanTable, Status
from dperm._config import (
    ExperimentSpec,
    build_spec,
    equal_budget_gd_iterations,
    load_spec,
    preset_spec,
)
from dperm._data import (
    DatasetSource,
    NormalizationKind,
    SourceKind,
    binarize_labels,
    load_dataset,
    normalize_rows,
    synth_logistic,
    synth_quadratic,
)
from dperm._exceptions import (
    ConvergenceError,
    DataFormatError,
    DpermError,
    ExperimentError,
    InfeasibleScheduleError,
    InvalidInputError,
    SpecError,
)
from dperm._geometry import (
    AccMDConfig,
    BodyKind,
    ConvexBody,
    MirrorMap,
    WidthEstimate,
    bregman,
    dp_accmd,
    dual_norm,
    gaussian_width_mc,
    diameter_gauge_check,
    minkowski_norm,
    mirror_step,
    project_l1_ball,
    recommend_T_accmd,
    smoothed_min_step,
)
from dperm._harness import (
    AggregateRow,
    ReferenceSolution,
    ResultRecord,
    RunSummary,
    aggregate,
    emit_results,
    load_results,
    reference_minimizer,
    run_experiment,
)
from dperm._objective import (
    DataPoint,
    Dataset,
    DoubleWellObjective,
    ErmObjective,
    LossKind,
    LossModel,
    OracleCounter,
    QuadraticObjective,
    Regularizer,
    RegularizerKind,
    derive_constants,
    excess_risk,
    full_gradient,
    prox,
    sample_gradient,
)
from dperm._optimizers import (
    EpochRecord,
    GdConfig,
    OutputMode,
    PLReport,
    RunTrace,
    SvrgConfig,
    SvrgPpConfig,
    SvrgSchedule,
    check_svrg_condition,
    dp_gd,
    dp_svrg,
    dp_svrg_pp,
    pl_check,
    recommend_svrg_schedule,
    recommend_T_gradnorm,
    recommend_T_pl,
    svrg_direction,
)
from dperm._privacy import (
    Algorithm,
    CalibrationConstants,
    CalibrationMode,
    NoisePlan,
    PrivacyBudget,
    RunStreams,
    amplified_epsilon,
    calibrate,
    calibrate_advanced,
    calibrate_full_gradient,
    calibrate_svrg,
    calibrate_svrg_pp,
    gaussian_mechanism_sigma,
    sample_noise,
    svrg_pp_queries,
    svrg_query_sensitivity,
    total_queries,
)
from dperm._protocols import Objective, ProjectableSet

try:
    __version__ = _get_version("dperm")
except Exception:
    __version__ = "0.0.0"  # Fallback for editable installs without metadata

__all__ = [
    # Objectives
    "DataPoint",
    "Dataset",
    "LossKind",
    "LossModel",
    "Regularizer",
    "RegularizerKind",
    "ErmObjective",
    "QuadraticObjective",
    "DoubleWellObjective",
    "OracleCounter",
    "derive_constants",
    "full_gradient",
    "sample_gradient",
    "prox",
    "excess_risk",
    # Privacy
    "Algorithm",
    "CalibrationMode",
    "CalibrationConstants",
    "PrivacyBudget",
    "NoisePlan",
    "RunStreams",
    "calibrate",
    "calibrate_svrg",
    "calibrate_svrg_pp",
    "calibrate_full_gradient",
    "calibrate_advanced",
    "gaussian_mechanism_sigma",
    "svrg_query_sensitivity",
    "amplified_epsilon",
    "svrg_pp_queries",
    "total_queries",
    "sample_noise",
    # Optimizers
    "SvrgConfig",
    "SvrgPpConfig",
    "GdConfig",
    "OutputMode",
    "EpochRecord",
    "RunTrace",
    "SvrgSchedule",
    "PLReport",
    "dp_svrg",
    "dp_svrg_pp",
    "dp_gd",
    "svrg_direction",
    "check_svrg_condition",
    "recommend_svrg_schedule",
    "pl_check",
    "recommend_T_pl",
    "recommend_T_gradnorm",
    # Geometry
    "BodyKind",
    "ConvexBody",
    "MirrorMap",
    "AccMDConfig",
    "WidthEstimate",
    "minkowski_norm",
    "dual_norm",
    "diameter_gauge_check",
    "project_l1_ball",
    "gaussian_width_mc",
    "bregman",
    "smoothed_min_step",
    "mirror_step",
    "dp_accmd",
    "recommend_T_accmd",
    # Harness
    "DatasetSource",
    "SourceKind",
    "NormalizationKind",
    "load_dataset",
    "binarize_labels",
    "normalize_rows",
    "synth_logistic",
    "synth_quadratic",
    "ExperimentSpec",
    "load_spec",
    "build_spec",
    "preset_spec",
    "equal_budget_gd_iterations",
    "ReferenceSolution",
    "RunSummary",
    "AggregateRow",
    "ResultRecord",
    "reference_minimizer",
    "run_experiment",
    "aggregate",
    "emit_results",
    "load_results",
    # Components
    "NoisePlanTable",
    "AggregateTable",
    "Status",
    # Protocols
    "Objective",
    "ProjectableSet",
    # Exceptions
    "DpermError",
    "InvalidInputError",
    "InfeasibleScheduleError",
    "ConvergenceError",
    "DataFormatError",
    "SpecError",
    "ExperimentError",
]
