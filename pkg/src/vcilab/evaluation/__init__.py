from .bounds import BoundCheckResult, min_gap, verify_elbo_discrete, verify_implicit_elbo_discrete
from .metrics import (
    CounterfactualErrors,
    IdentityModel,
    MetricsReport,
    OracleReplay,
    axiomatic_metrics,
    counterfactual_errors,
    counterfactual_mse,
    group_r2,
    hard_components,
    oracle_consistency_kl,
    oracle_restrictiveness,
    outcome_variance,
    predict_counterfactuals,
    r2_score,
)

__all__ = [
    "BoundCheckResult",
    "CounterfactualErrors",
    "IdentityModel",
    "MetricsReport",
    "OracleReplay",
    "axiomatic_metrics",
    "counterfactual_errors",
    "counterfactual_mse",
    "group_r2",
    "hard_components",
    "min_gap",
    "oracle_consistency_kl",
    "oracle_restrictiveness",
    "outcome_variance",
    "predict_counterfactuals",
    "r2_score",
    "verify_elbo_discrete",
    "verify_implicit_elbo_discrete",
]
