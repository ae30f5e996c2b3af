"""Difference-in-differences ATT estimation with covariate balancing.

Four estimators over two-period panel data (outcome regression, inverse
probability weighting, the augmented combination, and exact-balance
reweighting), influence-function inference, and a Monte Carlo study harness.
"""

from .backend import backend_name
from .errors import (
    CbpsDidError,
    ConstantTreatment,
    InvalidSpec,
    MissingColumn,
    NoConvergence,
    NonBinaryTreatment,
    NonFiniteValue,
    NumericalError,
    RankDeficient,
    Separation,
    SingularJacobian,
    TooFewControls,
    UnknownTerm,
    ValidationError,
)
from .estimators import (
    AttResult,
    MomentStack,
    aipw_sandwich_variance,
    att_aipw,
    att_cbps,
    att_ipw,
    att_or,
    efficient_influence,
    estimate_all,
    sandwich_variance,
)
from .numopt import (
    LogisticLink,
    OutcomeFit,
    PropensityFit,
    cbps_solve,
    logistic_mle,
    ols_control,
    wls_cbps_gamma,
)
from .panel import (
    CovariateSpec,
    DesignMatrix,
    OverlapReport,
    PanelDataset,
    build_design,
    interact,
    load_csv,
    overlap_report,
    raw,
    square,
)
from .simulation import (
    DgpConfig,
    MetricsRow,
    Replication,
    StandardizationConstants,
    StudyReport,
    compute_standardization,
    default_constants,
    draw_replication,
    efficiency_bound,
    efficiency_bound_detail,
    run_study,
)

__version__ = "0.1.0"

__all__ = [
    "AttResult",
    "CbpsDidError",
    "ConstantTreatment",
    "CovariateSpec",
    "DesignMatrix",
    "DgpConfig",
    "InvalidSpec",
    "LogisticLink",
    "MetricsRow",
    "MissingColumn",
    "MomentStack",
    "NoConvergence",
    "NonBinaryTreatment",
    "NonFiniteValue",
    "NumericalError",
    "OutcomeFit",
    "OverlapReport",
    "PanelDataset",
    "PropensityFit",
    "RankDeficient",
    "Replication",
    "Separation",
    "SingularJacobian",
    "StandardizationConstants",
    "StudyReport",
    "TooFewControls",
    "UnknownTerm",
    "ValidationError",
    "aipw_sandwich_variance",
    "att_aipw",
    "att_cbps",
    "att_ipw",
    "att_or",
    "backend_name",
    "build_design",
    "cbps_solve",
    "compute_standardization",
    "default_constants",
    "draw_replication",
    "efficiency_bound",
    "efficiency_bound_detail",
    "efficient_influence",
    "estimate_all",
    "interact",
    "load_csv",
    "logistic_mle",
    "ols_control",
    "overlap_report",
    "raw",
    "run_study",
    "sandwich_variance",
    "square",
    "wls_cbps_gamma",
]
