"""Adaptive robust control for dynamic portfolio selection under parameter uncertainty."""

from .estimation import (
    ConfidenceRegion,
    EstimatorState,
    ModelParams,
    ParameterSpace,
    discretize_region,
    project,
    region_case1,
    region_case2,
    update_mean,
    update_mean_var,
)
from .metrics import glr, summarize, var95
from .quantization import Quantizer, build_normal_quantizer, chi2_2_quantile, expect, normal_quantile
from .simulation import WealthPaths, run_strategy, simulate_noise
from .solver import (
    MarketConfig,
    StateGrid,
    ValueTable,
    build_state_grid,
    evaluate_policy_worstcase,
    solve_adaptive_family,
    solve_adaptive_robust,
    solve_robust,
    solve_true_model,
    step_utility,
)

__version__ = "0.1.0"

__all__ = [
    "ConfidenceRegion",
    "EstimatorState",
    "MarketConfig",
    "ModelParams",
    "ParameterSpace",
    "Quantizer",
    "StateGrid",
    "ValueTable",
    "WealthPaths",
    "build_normal_quantizer",
    "build_state_grid",
    "chi2_2_quantile",
    "discretize_region",
    "evaluate_policy_worstcase",
    "expect",
    "glr",
    "normal_quantile",
    "project",
    "region_case1",
    "region_case2",
    "run_strategy",
    "simulate_noise",
    "solve_adaptive_family",
    "solve_adaptive_robust",
    "solve_robust",
    "solve_true_model",
    "step_utility",
    "summarize",
    "update_mean",
    "update_mean_var",
    "var95",
]
