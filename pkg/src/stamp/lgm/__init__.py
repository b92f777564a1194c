"""Latent Gaussian model assembly: layout, design, constraints, priors."""

from .config import CORE_FLAGS, EXTENDED_FLAGS, FULL_CORE, MINIMAL, ModelConfig, core_configs, extended_configs
from .layout import (
    ConstraintSet,
    HyperParam,
    LatentLayout,
    assemble_layout,
    initial_theta,
    log_hyperprior,
    natural_from_theta,
    prior_precision,
    theta_from_natural,
    unpack_theta,
)
from .priors import (
    equicorr_precision,
    pc_cor_distance,
    pc_cor_logpdf,
    pc_cor_rate,
    pc_prec_logpdf,
    pc_prec_logpdf_logtau,
    pc_prec_rate,
)
