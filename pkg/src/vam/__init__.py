"""School value-added models: cohorts, designs, fits, effects, comparisons."""

__version__ = "0.1.0"

from .cohort import (
    EARLY_MISSING,
    Cohort,
    IngestConfig,
    derive_composition,
    discretize_achievement,
    load_cohort,
    quantile_cuts,
    standardize_outcome,
)
from .comparison import (
    ComparisonReport,
    average_ranks,
    build_report,
    correlation_matrix,
    moderate_or_large_share,
    pearson,
    scatter_export,
    spearman,
    variant_analysis,
)
from .design import (
    DesignMatrix,
    ModelFamily,
    ModelSpec,
    PriorTreatment,
    build_design,
    canonical_specs,
)
from .effects import (
    CATEGORIES,
    EffectTable,
    build_effect_table,
    classify_effect,
    compute_school_effects,
    confidence_intervals,
    estimate_variance_components,
    shrink_effects,
    variance_decomposition,
)
from .errors import EstimationError, OutputError, ValidationError, VamError
from .estimation import (
    FittedModel,
    adjusted_r_squared,
    cluster_robust_covariance,
    fit_least_squares,
)
from .simulation import (
    GroundTruth,
    SimConfig,
    generate_cohort,
    oracle_fit,
    calibrated_config,
    recovery_config,
    recovery_report,
    write_simulated_cohort,
)

__all__ = [
    "EARLY_MISSING",
    "CATEGORIES",
    "Cohort",
    "ComparisonReport",
    "DesignMatrix",
    "EffectTable",
    "EstimationError",
    "FittedModel",
    "GroundTruth",
    "IngestConfig",
    "ModelFamily",
    "ModelSpec",
    "OutputError",
    "PriorTreatment",
    "SimConfig",
    "ValidationError",
    "VamError",
    "adjusted_r_squared",
    "average_ranks",
    "build_design",
    "build_effect_table",
    "build_report",
    "canonical_specs",
    "classify_effect",
    "cluster_robust_covariance",
    "compute_school_effects",
    "confidence_intervals",
    "correlation_matrix",
    "derive_composition",
    "discretize_achievement",
    "estimate_variance_components",
    "fit_least_squares",
    "generate_cohort",
    "load_cohort",
    "moderate_or_large_share",
    "oracle_fit",
    "calibrated_config",
    "pearson",
    "quantile_cuts",
    "recovery_config",
    "recovery_report",
    "scatter_export",
    "shrink_effects",
    "spearman",
    "standardize_outcome",
    "variance_decomposition",
    "variant_analysis",
    "write_simulated_cohort",
]
