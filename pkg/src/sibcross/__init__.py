"""Sibling comparison designs: confounded sibling-pair simulation, between-within
and inverse-probability-weighted estimators of family-level effects, and the
within-family cross-over model."""

from .crossover import CrossoverDataset, CrossoverParams, bias_decomposition, simulate_crossover
from .data import BwFit, Dataset, DgpParams, FitResult, MissingReason, validate_dataset
from .dgp import PRESETS, SelectionModel, analytic_targets, preset, simulate_dataset
from .estimators import AlphaConvention, conditional_ols, estimate_alpha, fit_bw_model, logistic_irls
from .harness import Analysis, Procedure, ScenarioConfig, cluster_bootstrap, run_replication, run_scenario
from .weighting import Normalization, TruncationRule, estimated_weights, true_weights, weighted_contrast

__version__ = "0.1.0"

__all__ = [
    "PRESETS",
    "AlphaConvention",
    "Analysis",
    "BwFit",
    "CrossoverDataset",
    "CrossoverParams",
    "Dataset",
    "DgpParams",
    "FitResult",
    "MissingReason",
    "Normalization",
    "Procedure",
    "ScenarioConfig",
    "SelectionModel",
    "TruncationRule",
    "analytic_targets",
    "bias_decomposition",
    "cluster_bootstrap",
    "conditional_ols",
    "estimate_alpha",
    "estimated_weights",
    "fit_bw_model",
    "logistic_irls",
    "preset",
    "run_replication",
    "run_scenario",
    "simulate_crossover",
    "simulate_dataset",
    "true_weights",
    "validate_dataset",
    "weighted_contrast",
]
