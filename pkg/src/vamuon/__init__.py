"""Variance-adaptive Muon optimizers (Muon-NSR, Muon-VS) with baselines, toy problems and checks."""

__version__ = "0.1.0"

from .linalg import newton_schulz, polar_factor_exact, svd_small
from .moments import MomentState, bias_correct, nesterov_lookahead, update_moments
from .optimizers import (
    Optimizer,
    OptimizerConfig,
    ParamSlot,
    adamw_step,
    muon_nsr_reshuffled_step,
    muon_variant_step,
    partition_params,
    precondition_nsr,
    precondition_vs,
    scale_factor,
    signum_step,
)
from .problems import ProblemSpec, evaluate_loss, make_problem, sample_gradient
from .schedules import Schedule

__all__ = [
    "MomentState",
    "Optimizer",
    "OptimizerConfig",
    "ParamSlot",
    "ProblemSpec",
    "Schedule",
    "adamw_step",
    "bias_correct",
    "evaluate_loss",
    "make_problem",
    "muon_nsr_reshuffled_step",
    "muon_variant_step",
    "nesterov_lookahead",
    "newton_schulz",
    "partition_params",
    "polar_factor_exact",
    "precondition_nsr",
    "precondition_vs",
    "sample_gradient",
    "scale_factor",
    "signum_step",
    "svd_small",
    "update_moments",
]
