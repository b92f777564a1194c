"""Approximate Bayesian inference: Gaussian approximations, hyperparameter exploration, sampling."""

from .explore import Exploration, ExplorationPoint, HyperPosterior, ccd_design, explore_hyperparameters
from .fit import PosteriorFit, fit, sample_latent
from .gaussian import (
    GaussianApprox,
    GaussianLikelihood,
    LatentModel,
    PoissonLikelihood,
    gaussian_at,
    log_marginal_laplace,
    newton_mode,
)
