"""Scikit-learn style facade over the full estimation pipeline.

SMUCIVEstimator wires priors-from-data, the Gibbs sampler, and the
post-estimation summaries behind fit/predict so the model slots into
standard tooling (get_params/set_params, cloning, grid evaluation).
"""
from __future__ import annotations

import numpy as np
from joblib import Parallel, delayed
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import marglik, structural
from .data import Dataset
from .mcmc import PosteriorChain, SamplerConfig, prior_from_data, run_chain
from .model import ModelSpec, Variant


def _as_dataset(X) -> Dataset:
    if isinstance(X, Dataset):
        return X
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != 4:
        raise ValueError("X must be a Dataset or a (T, 4) array of "
                         "(g, pi, r, m) observations")
    dates = tuple(str(t) for t in range(1, X.shape[0] + 1))
    return Dataset(dates=dates, g=X[:, 0], pi=X[:, 1], r=X[:, 2], m=X[:, 3])


class SMUCIVEstimator(BaseEstimator):
    """Bayesian trend-cycle model with an external instrument.

    Parameters mirror the model and sampler configuration; fit(X) runs
    n_chains Gibbs chains on a (T, 4) sample of (g, pi, r, m) and pools the
    kept draws.  predict(X) returns the posterior-median trend paths
    (g*, dg*, pi*, r*) for the fitted sample.
    """

    def __init__(self, p: int = 4, variant: str = "baseline",
                 n_burn: int = 20_000, n_keep: int = 20_000, thin: int = 1,
                 seed: int = 0, n_chains: int = 1, horizon: int = 40,
                 mh_target_accept: float = 0.30, n_jobs: int = 1):
        self.p = p
        self.variant = variant
        self.n_burn = n_burn
        self.n_keep = n_keep
        self.thin = thin
        self.seed = seed
        self.n_chains = n_chains
        self.horizon = horizon
        self.mh_target_accept = mh_target_accept
        self.n_jobs = n_jobs

    def _config(self) -> SamplerConfig:
        return SamplerConfig(n_burn=self.n_burn, n_keep=self.n_keep,
                             thin=self.thin, seed=self.seed,
                             mh_target_accept=self.mh_target_accept)

    def fit(self, X, y=None):
        if self.n_chains < 1:
            raise ValueError("n_chains must be at least 1")
        data = _as_dataset(X)
        prior = prior_from_data(data.to_matrix(), self.p)
        spec = ModelSpec(p=self.p, prior=prior, variant=Variant(self.variant))
        cfg = self._config()
        if self.n_chains == 1:
            chains = [run_chain(spec, data, cfg)]
        else:
            chains = Parallel(n_jobs=self.n_jobs)(
                delayed(run_chain)(spec, data, cfg, i)
                for i in range(self.n_chains))
        self.spec_ = spec
        self.data_ = data
        self.chains_ = chains
        self.chain_ = PosteriorChain(
            draws=[d for ch in chains for d in ch.draws],
            accept_rate_B=float(np.mean([ch.accept_rate_B for ch in chains])),
            seed=self.seed, chain_index=0, config=cfg,
            spectral_radius=[r for ch in chains for r in ch.spectral_radius])
        return self

    def predict(self, X=None) -> np.ndarray:
        """Posterior-median trend paths for the fitted sample, shape (T, 4)."""
        check_is_fitted(self, "chain_")
        if X is not None:
            data = _as_dataset(X)
            if data.T != self.data_.T:
                raise ValueError("predict only covers the fitted sample; "
                                 "refit on new data")
        summary = self.trend_summary()
        return summary.q50.T

    def trend_summary(self) -> structural.TrendSummary:
        check_is_fitted(self, "chain_")
        return structural.summarize_trends(self.chain_, self.data_, self.spec_)

    def impulse_responses(self, H: int | None = None) -> structural.IrfResult:
        check_is_fitted(self, "chain_")
        return structural.irf_summary(self.chain_, self.spec_,
                                      H=self.horizon if H is None else H)

    def log_marginal_likelihood(self, thin: int = 1) -> marglik.MarglikResult:
        check_is_fitted(self, "chain_")
        return marglik.estimate_ml(self.chain_, self.spec_, self.data_,
                                   thin=thin)

    def score(self, X=None, y=None) -> float:
        """Log marginal likelihood of the fitted sample (model evidence)."""
        return self.log_marginal_likelihood().log_ml
