"""Bayesian hierarchical fit, convergence diagnostics and predictive baseline."""

from .baseline import (
    CvResult,
    FoldResult,
    RidgeModel,
    SingularDesignError,
    baseline_fit_predict,
    leave_one_team_out,
    ridge_fit,
    select_lambda,
)
from .diagnostics import (
    ConvergenceWarning,
    EffectTable,
    beta_interval_coverage,
    effect_table,
    effective_sample_size,
    split_rhat,
)
from .model import HierarchicalModel, HierarchicalModelSpec, NonCenteredModel, log_posterior, pack, unpack
from .nuts import SamplerError, run_chain, sample_chains
from .posterior import PosteriorSamples, nuts_sample

__all__ = [
    "ConvergenceWarning", "CvResult", "EffectTable", "FoldResult", "HierarchicalModel",
    "HierarchicalModelSpec", "NonCenteredModel", "PosteriorSamples", "RidgeModel", "SamplerError",
    "SingularDesignError", "baseline_fit_predict", "beta_interval_coverage", "effect_table",
    "effective_sample_size", "leave_one_team_out", "log_posterior", "nuts_sample", "pack", "ridge_fit",
    "run_chain", "sample_chains", "select_lambda", "split_rhat", "unpack",
]
