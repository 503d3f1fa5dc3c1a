"""Bayesian promotion time cure model with a penalized B-spline baseline hazard."""
__version__ = "0.1.0"

from .estimator import PromotionTimeCureModel, make_survival_target
from .model import (
    ModelConfig,
    ModelParams,
    PenaltyHypers,
    Priors,
    QuadratureGrid,
    SurvivalDataset,
    WeibullBaseline,
    log_likelihood,
    log_posterior,
)
from .sampler import ChainConfig, ChainError, ChainOutput, run_chain
from .simulation import ScenarioConfig, generate_dataset
from .splines import build_knot_grid, eval_basis, penalty_matrix
from .study import replicate_study

__all__ = [
    "ChainConfig", "ChainError", "ChainOutput", "ModelConfig", "ModelParams",
    "PenaltyHypers", "Priors", "PromotionTimeCureModel", "QuadratureGrid",
    "ScenarioConfig", "SurvivalDataset", "WeibullBaseline", "build_knot_grid",
    "eval_basis", "generate_dataset", "log_likelihood", "log_posterior",
    "make_survival_target", "penalty_matrix", "replicate_study", "run_chain",
]
