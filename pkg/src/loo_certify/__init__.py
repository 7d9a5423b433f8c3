"""Leave-one-out risk estimation, algorithmic-stability profiles and tail bounds."""

from .core import (
    KDE,
    OLS,
    ConfigError,
    Dataset,
    DegenerateDesignError,
    DeletedView,
    EmpiricalMean,
    FoldError,
    GaussianLinear,
    GaussianSine,
    Loss,
    NondifferentiableError,
    Observation,
    StabilizedNW,
    StabilizedOLS,
    UniformSine,
    dataset_norm,
    loss_eval,
    predict,
    sample_dataset,
)
from .loo import LooResult, RiskOracleResult, loo_fast, loo_naive, risk_oracle

__version__ = "0.1.0"

__all__ = [
    "KDE", "OLS", "ConfigError", "Dataset", "DegenerateDesignError", "DeletedView",
    "EmpiricalMean", "FoldError", "GaussianLinear", "GaussianSine", "Loss",
    "NondifferentiableError", "Observation", "StabilizedNW", "StabilizedOLS", "UniformSine",
    "dataset_norm", "loss_eval", "predict", "sample_dataset",
    "LooResult", "RiskOracleResult", "loo_fast", "loo_naive", "risk_oracle",
]
