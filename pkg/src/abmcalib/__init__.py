"""abmcalib: calibration toolkit for stochastic agent-based simulations.

Dynamic (per-timestep) parameters are tuned by hidden-regime detection with
beta-posterior resampling; heterogeneous (per-cluster) parameters by latent
clustering plus Gaussian-process surrogate optimization.
"""

from .acquisition import SearchStrategy, expected_improvement, weighted_ei
from .bayesopt import EvaluationLog, HeterogeneousCalibrator
from .clustering import build_assignment, cluster_agents
from .framework import (
    FrameworkConfig,
    MetricsReport,
    ParameterSpec,
    run_framework,
    select_best,
)
from .gp import GaussianProcessSurrogate, KernelHyperparams, matern52
from .hmm import GaussianHMM, fit_hmm
from .metrics import dynamic_mae, heterogeneous_euclidean, mape, welch_one_tailed
from .mixture import DirichletProcessMixture, GaussianMixtureModel, fit_dpmm, fit_gmm
from .regimes import (
    CandidateSet,
    DynamicCalibrator,
    compute_likelihoods,
    detect_poor_fit,
    fit_beta,
    generate_candidates,
    merge_regimes,
)
from .vae import TrajectoryAutoencoder, gaussian_kl
from .wealth import (
    AgentTrace,
    DynamicSchedule,
    HeterogeneousAssignment,
    SummaryTrace,
    ValidationData,
    WealthModelConfig,
    generate_validation,
    gini,
    run_simulation,
    summarize,
)

__version__ = "0.1.0"

__all__ = [
    "AgentTrace",
    "CandidateSet",
    "DirichletProcessMixture",
    "DynamicCalibrator",
    "DynamicSchedule",
    "EvaluationLog",
    "FrameworkConfig",
    "GaussianHMM",
    "GaussianMixtureModel",
    "GaussianProcessSurrogate",
    "HeterogeneousAssignment",
    "HeterogeneousCalibrator",
    "KernelHyperparams",
    "MetricsReport",
    "ParameterSpec",
    "SearchStrategy",
    "SummaryTrace",
    "TrajectoryAutoencoder",
    "ValidationData",
    "WealthModelConfig",
    "build_assignment",
    "cluster_agents",
    "compute_likelihoods",
    "detect_poor_fit",
    "dynamic_mae",
    "expected_improvement",
    "fit_beta",
    "fit_dpmm",
    "fit_gmm",
    "fit_hmm",
    "gaussian_kl",
    "generate_candidates",
    "generate_validation",
    "gini",
    "heterogeneous_euclidean",
    "mape",
    "matern52",
    "merge_regimes",
    "run_framework",
    "run_simulation",
    "select_best",
    "summarize",
    "weighted_ei",
    "welch_one_tailed",
]
