"""Class prevalence estimation under prior probability shift."""

import sys

from prevalest.binormal import (
    AsymptoticVarianceCurve,
    BinormalSpec,
    monte_carlo_clt,
    posterior_exact,
    sigma2_debias,
    sigma2_friedman,
    sigma2_ml,
    sweep_variances,
)
from prevalest.core import (
    DiscretePopulation,
    HardClassifier,
    LabeledDataset,
    PosteriorModel,
    PrevalenceVector,
    UnlabeledDataset,
    empirical_priors,
    make_prevalence,
    sample_prior_shift,
)
from prevalest.errors import ConvergenceError, InvalidInputError, PrevalestError, SingularSystemError
from prevalest.moments import (
    MomentSystem,
    ReducedSystem,
    StatisticProfile,
    build_conditional_mean_system,
    build_covariance_system,
    build_reduced_system,
    rank_diagnostic,
    solve_full_system,
    solve_reduced,
)
from prevalest.quantifiers import (
    CostSensitiveSpec,
    adjusted_count,
    cost_sensitive_classifier,
    covariance_debias_multiclass,
    debias_estimate,
    em_ml_estimate,
    friedman_classifier,
    friedman_estimate,
    gpac_estimate,
    pac_estimate,
    run_method,
)
from prevalest.report import Diagnostics, EstimateReport, RankReport

__version__ = "0.1.0"

__all__ = sorted(
    name for name, obj in globals().items() if not name.startswith("_") and not isinstance(obj, type(sys))
)
