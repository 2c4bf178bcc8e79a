"""Bayesian structural trend-cycle model with an external instrument."""

from .chainio import load_chain, save_chain
from .data import Dataset, ingest, simulate_dgp
from .estimator import SMUCIVEstimator
from .marglik import estimate_ml
from .mcmc import PosteriorChain, SamplerConfig, prior_from_data, run_chain
from .model import ModelSpec, ParameterDraw, PriorConfig, Variant
from .structural import (historical_decomposition, irf, irf_summary,
                         summarize_trends)

__version__ = "0.1.0"

__all__ = [
    "Dataset", "ModelSpec", "ParameterDraw", "PosteriorChain", "PriorConfig",
    "SMUCIVEstimator", "SamplerConfig", "Variant", "estimate_ml",
    "historical_decomposition", "ingest", "irf", "irf_summary", "load_chain",
    "prior_from_data", "run_chain", "save_chain", "simulate_dgp",
    "__version__",
]
