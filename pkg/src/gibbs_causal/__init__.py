"""Doubly robust Bayesian causal inference with propensity-weighted Gibbs posteriors."""

__version__ = "0.1.0"

from .assembly import GibbsModel
from .basis import SplineBasis, evaluate_basis, make_quartile_basis
from .bootstrap import BootstrapConfig, abdr_draw, abdr_posterior, draw_dirichlet_weights
from .errors import ConfigurationError, DataError, NumericError
from .model_core import (
    Dataset,
    OutcomeSpec,
    ParamVector,
    PriorSpec,
    SplineTerm,
    ate_from_samples,
    build_design_matrix,
    gibbs_log_posterior,
    weighted_loglik,
)
from .propensity import PsSpec, fit_ps_mle, ps_probability, weight, weights_for_dataset
from .sampler import PosteriorSamples, SamplerConfig, diagnostics, run_chain, summarize
from .sim import DgpSpec, SimulationReport, StudySpec, dgp_example1, dgp_example2, run_study
