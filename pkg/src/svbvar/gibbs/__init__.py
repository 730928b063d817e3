"""Posterior simulators for the three volatility models."""

from ..likelihoods import homoskedastic_var_log_ml
from .chain import MODELS, RunConfig, SamplerError, initial_state, run_chain, sweep, to_state
from .csv import csv_sample_A_Sigma, csv_sample_h, csv_sample_kappa, var_posterior_draws
from .fsv import fsv_sample_factors, fsv_sample_theta
from .sv import sample_equation_kappas, sv_sample_alpha, sv_sample_beta
from .volatility import (
    KSC_MEANS,
    KSC_PROBS,
    KSC_VARS,
    ksc_sample_logvol,
    sample_ar1_mu,
    sample_ar1_phi,
    sample_ar1_sigma2,
)

__all__ = [
    "MODELS",
    "RunConfig",
    "SamplerError",
    "initial_state",
    "run_chain",
    "sweep",
    "to_state",
    "csv_sample_A_Sigma",
    "csv_sample_h",
    "csv_sample_kappa",
    "var_posterior_draws",
    "fsv_sample_factors",
    "fsv_sample_theta",
    "sample_equation_kappas",
    "sv_sample_alpha",
    "sv_sample_beta",
    "ksc_sample_logvol",
    "sample_ar1_mu",
    "sample_ar1_phi",
    "sample_ar1_sigma2",
    "homoskedastic_var_log_ml",
    "KSC_PROBS",
    "KSC_MEANS",
    "KSC_VARS",
]
