"""Synthetic leagues from known ground truth and brute-force oracles for tiny models."""

from .oracles import (
    ISResult,
    MCMCResult,
    OracleProblem,
    effective_size,
    gaussian_marginal_exact,
    gaussian_posterior_exact,
    oracle_is_marginal,
    oracle_mcmc_means,
    split_rhat,
)
from .truth import GroundTruth, Realization, fixed_effects, generate, realize

__all__ = [
    "GroundTruth",
    "ISResult",
    "MCMCResult",
    "OracleProblem",
    "Realization",
    "effective_size",
    "fixed_effects",
    "gaussian_marginal_exact",
    "gaussian_posterior_exact",
    "generate",
    "oracle_is_marginal",
    "oracle_mcmc_means",
    "realize",
    "split_rhat",
]
