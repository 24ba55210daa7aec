"""Spectral filters, effective rank and the rank differential between the
online and target branches of non-contrastive self-supervised learners."""

from ._version import __version__
from .data import (
    CorrelationBundle,
    FinitePopulation,
    IsotropicAugModel,
    empirical_correlations,
    exact_correlations_linear,
    monte_carlo_correlations,
    sample_pair,
)
from .dynamics import (
    LinearModel,
    UnconstrainedState,
    linear_training_run,
    optimal_predictor,
    simulate_feature_gd,
    symsimsiam_step,
    unconstrained_step,
    verify_theorem1,
)
from .errors import (
    ConfigError,
    DegenerateDirectionWarning,
    DegenerateSpectrumError,
    DivergenceError,
    FilterDomainError,
    FilterUsageWarning,
    InvalidInputError,
    RDMError,
    SingularMatrixError,
)
from .filters import (
    FilterKind,
    SpectralFilter,
    apply_online_filter,
    apply_target_filter,
    center_sharpen,
    classify,
    extract_transformation_filter,
    parse_filter,
    sinkhorn_knopp,
)
from .harness import ExperimentConfig, run_experiment, verify_all
from .spectral import (
    CorrelationEstimate,
    Spectrum,
    correlation,
    effective_rank,
    eigenspace_alignment,
    spectrum,
)

__all__ = [
    "__version__",
    "ExperimentConfig",
    "run_experiment",
    "verify_all",
    "apply_online_filter",
    "apply_target_filter",
    "center_sharpen",
    "classify",
    "ConfigError",
    "correlation",
    "CorrelationBundle",
    "CorrelationEstimate",
    "DegenerateDirectionWarning",
    "DegenerateSpectrumError",
    "DivergenceError",
    "effective_rank",
    "eigenspace_alignment",
    "empirical_correlations",
    "exact_correlations_linear",
    "extract_transformation_filter",
    "FilterDomainError",
    "FilterKind",
    "FilterUsageWarning",
    "FinitePopulation",
    "InvalidInputError",
    "IsotropicAugModel",
    "linear_training_run",
    "LinearModel",
    "monte_carlo_correlations",
    "optimal_predictor",
    "parse_filter",
    "RDMError",
    "sample_pair",
    "simulate_feature_gd",
    "SingularMatrixError",
    "sinkhorn_knopp",
    "SpectralFilter",
    "Spectrum",
    "spectrum",
    "symsimsiam_step",
    "unconstrained_step",
    "UnconstrainedState",
    "verify_theorem1",
]
