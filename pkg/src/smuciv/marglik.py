"""Marginal-likelihood estimation from reweighted posterior output.

Two modified harmonic mean estimators are provided.  The improved one (CMGD)
works on the low-dimensional parameter block (Phi, B, beta, alpha) after the
states and the shrinkage hyperparameters have been integrated out
analytically; the plain one (GD) reweights the full parameter set including
the states and is kept only as a small-sample benchmark.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy import special
from scipy.linalg import solve_triangular
from scipy.optimize import brentq
from scipy.stats import chi2

from . import gaussian, mcmc
from .model import ModelSpec, ParameterDraw, assemble_structural


class TuningError(RuntimeError):
    """The tuning density could not be built from the chain."""


class SupportError(RuntimeError):
    """Every draw fell outside the tuning support; estimation is impossible."""


class Estimator(str, Enum):
    GD = "gd"
    CMGD = "cmgd"


# ---------------------------------------------------------------------------
# truncated-Gaussian tuning blocks

@dataclass(frozen=True)
class EllipsoidBlock:
    """Multivariate normal restricted to the ellipsoid holding `coverage`
    of its own probability mass."""

    name: str
    mean: np.ndarray
    chol: np.ndarray          # lower Cholesky factor of the covariance
    radius_sq: float
    log_norm: float           # log of the Gaussian mass inside the ellipsoid

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def mahalanobis_sq(self, x: np.ndarray) -> float:
        d = solve_triangular(self.chol, np.asarray(x) - self.mean,
                             lower=True, check_finite=False)
        return float(d @ d)

    def contains(self, x: np.ndarray) -> bool:
        return self.mahalanobis_sq(x) <= self.radius_sq

    def logpdf(self, x: np.ndarray) -> float:
        q = self.mahalanobis_sq(x)
        if q > self.radius_sq:
            return -np.inf
        logdet_half = float(np.sum(np.log(np.diag(self.chol))))
        return (-0.5 * self.dim * np.log(2.0 * np.pi) - logdet_half
                - 0.5 * q - self.log_norm)

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        # rejection from the untruncated Gaussian; acceptance is `coverage`
        for _ in range(10000):
            x = self.mean + self.chol @ rng.standard_normal(self.dim)
            if self.contains(x):
                return x
        raise TuningError(f"rejection sampling stalled in block {self.name}")


@dataclass(frozen=True)
class IntervalBlock:
    """Univariate normal restricted to (lower, upper)."""

    name: str
    mean: float
    sd: float
    lower: float
    upper: float
    log_norm: float

    @property
    def dim(self) -> int:
        return 1

    def contains(self, x: float) -> bool:
        return self.lower < float(x) < self.upper

    def logpdf(self, x: float) -> float:
        x = float(x)
        if not self.contains(x):
            return -np.inf
        z = (x - self.mean) / self.sd
        return (-0.5 * np.log(2.0 * np.pi) - np.log(self.sd)
                - 0.5 * z * z - self.log_norm)

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        lo = special.ndtr((self.lower - self.mean) / self.sd)
        hi = special.ndtr((self.upper - self.mean) / self.sd)
        u = rng.uniform(lo, hi)
        return np.array([self.mean + self.sd * special.ndtri(u)])


@dataclass(frozen=True)
class TuningDensity:
    """Product of independent truncated blocks over the parameter vector."""

    blocks: tuple

    @property
    def dim(self) -> int:
        return sum(b.dim for b in self.blocks)

    def _split(self, theta: np.ndarray) -> list:
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.dim,):
            raise ValueError(f"theta must have length {self.dim}")
        out, k = [], 0
        for b in self.blocks:
            out.append(theta[k] if b.dim == 1 else theta[k:k + b.dim])
            k += b.dim
        return out

    def logpdf(self, theta: np.ndarray) -> float:
        return float(sum(b.logpdf(x)
                         for b, x in zip(self.blocks, self._split(theta))))

    def violated_blocks(self, theta: np.ndarray) -> list[str]:
        return [b.name for b, x in zip(self.blocks, self._split(theta))
                if not b.contains(x)]

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        return np.concatenate([np.atleast_1d(b.sample(rng))
                               for b in self.blocks])


def _regularized_cov(X: np.ndarray) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if not np.all(np.isfinite(X)):
        raise TuningError("non-finite draws in tuning-moment estimation")
    cov = np.atleast_2d(np.cov(X, rowvar=False))
    dim = cov.shape[0]
    scale = np.trace(cov) / dim
    if scale <= 0 or np.min(np.linalg.eigvalsh(cov)) < 1e-10 * scale:
        cov = cov + 1e-8 * max(scale, np.finfo(float).tiny) * np.eye(dim)
    return cov


def ellipsoid_block(name: str, X: np.ndarray,
                    coverage: float = 0.95) -> EllipsoidBlock:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    mean = X.mean(axis=0)
    cov = _regularized_cov(X)
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise TuningError(f"covariance of block {name} is degenerate") from exc
    r2 = float(chi2.ppf(coverage, df=mean.shape[0]))
    log_norm = float(np.log(chi2.cdf(r2, df=mean.shape[0])))
    return EllipsoidBlock(name=name, mean=mean, chol=chol,
                          radius_sq=r2, log_norm=log_norm)


def symmetric_interval_block(name: str, x: np.ndarray, coverage: float = 0.95,
                             lower: float = -np.inf,
                             upper: float = np.inf) -> IntervalBlock:
    """Central interval of half-width sqrt(chi2_{1,coverage})*sd, clipped to
    (lower, upper); the normalizer is the exact clipped Gaussian mass."""
    x = np.asarray(x, dtype=float)
    mean = float(x.mean())
    sd = float(x.std(ddof=1))
    if not np.isfinite(sd) or sd <= 0:
        raise TuningError(f"degenerate spread in block {name}")
    half = float(np.sqrt(chi2.ppf(coverage, df=1))) * sd
    lo = max(mean - half, lower)
    hi = min(mean + half, upper)
    mass = special.ndtr((hi - mean) / sd) - special.ndtr((lo - mean) / sd)
    if mass <= 0:
        raise TuningError(f"empty truncation region in block {name}")
    return IntervalBlock(name=name, mean=mean, sd=sd, lower=lo, upper=hi,
                         log_norm=float(np.log(mass)))


def alpha_interval_block(x: np.ndarray, coverage: float = 0.95,
                         name: str = "R_alpha") -> IntervalBlock:
    """(0, w) with w solving Ncdf((w-m)/s) - Ncdf(-m/s) = coverage.

    When the untruncated Gaussian puts less than `coverage` mass on the
    positive axis no such w exists; the block then degrades to (0, inf) with
    the exact positive-mass normalizer.
    """
    x = np.asarray(x, dtype=float)
    mean = float(x.mean())
    sd = float(x.std(ddof=1))
    if not np.isfinite(sd) or sd <= 0:
        raise TuningError(f"degenerate spread in block {name}")
    base = special.ndtr(-mean / sd)
    pos_mass = 1.0 - base
    if pos_mass <= coverage:
        return IntervalBlock(name=name, mean=mean, sd=sd, lower=0.0,
                             upper=np.inf, log_norm=float(np.log(pos_mass)))

    def f(w):
        return special.ndtr((w - mean) / sd) - base - coverage

    hi = mean + 2.0 * sd
    while f(hi) < 0:
        hi += 2.0 * sd
    w = brentq(f, 0.0, hi, xtol=1e-12)
    return IntervalBlock(name=name, mean=mean, sd=sd, lower=0.0, upper=float(w),
                         log_norm=float(np.log(coverage)))


# ---------------------------------------------------------------------------
# parameter vectorization and the analytic pieces of the weight

def parameter_matrix(chain, spec: ModelSpec) -> np.ndarray:
    """Stack (phi, free B entries, beta if free, alpha) per kept draw."""
    rows = [np.concatenate([mcmc.phi_to_vec(d.Phi),
                            mcmc.pack_impact(spec, d.B, d.beta, d.alpha)])
            for d in chain.draws]
    return np.asarray(rows)


def theta_to_draw(theta: np.ndarray, spec: ModelSpec) -> ParameterDraw:
    k = 9 * spec.p
    Phi = mcmc.vec_to_phi(np.asarray(theta, dtype=float)[:k], spec.p)
    B, beta, alpha = mcmc.unpack_impact(spec, np.asarray(theta, dtype=float)[k:])
    # kappa values are irrelevant once Phi's prior is marginalized
    return ParameterDraw(Phi=Phi, B=B, beta=beta, alpha=alpha,
                         kappa1=0.5, kappa2=0.5)


def log_integrated_likelihood(Phi, B, alpha, beta, spec: ModelSpec,
                              data) -> float:
    """Gaussian log-density of the sample with the states integrated out."""
    y = data.to_matrix() if hasattr(data, "to_matrix") else np.asarray(data, dtype=float)
    draw = ParameterDraw(Phi=Phi, B=B, beta=beta, alpha=alpha,
                         kappa1=0.5, kappa2=0.5)
    mats = assemble_structural(spec, draw)
    sys = gaussian.build_joint(spec, mats, spec.prior, y.shape[0])
    return gaussian.marginal_of_y(sys).logpdf(y.reshape(-1))


def _log_ig_tail_term(nu: float, S: float) -> float:
    """log[Gamma(nu) S^-nu F_IG(1; nu, S)] where F_IG(1) = Q(nu, S)."""
    Q = special.gammaincc(nu, S)
    if Q > 0:
        return float(special.gammaln(nu) - nu * np.log(S) + np.log(Q))
    # deep tail: Gamma(nu, S) ~ S^(nu-1) e^-S (1 + (nu-1)/S)
    return float(-np.log(S) - S + np.log1p((nu - 1.0) / S))


def log_marginal_prior_phi(Phi, spec: ModelSpec) -> float:
    """Closed-form log p(Phi) with both shrinkage scales integrated out."""
    p = spec.p
    own, cross = mcmc.phi_shrinkage_scales(np.asarray(Phi, dtype=float),
                                           spec.prior.sigma_sq)
    if own <= 0 or cross <= 0:
        raise ValueError(
            "Phi coincides with the shrinkage mean in a whole group; the "
            "marginal prior density diverges at that point"
        )
    nu1 = 1.5 * p - 1.0
    nu2 = 3.0 * p - 1.0
    if nu1 <= 0:
        raise ValueError("lag order too small for a proper marginal prior")
    lags = np.arange(1, p + 1, dtype=float)
    log_c = -4.5 * p * np.log(2.0 * np.pi) + 9.0 * float(np.sum(np.log(lags)))
    return log_c + _log_ig_tail_term(nu1, own) + _log_ig_tail_term(nu2, cross)


def log_phi_prior_conditional(spec: ModelSpec, Phi, kappa1: float,
                              kappa2: float) -> float:
    """log p(Phi | kappa1, kappa2) under the Gaussian shrinkage prior."""
    phi = mcmc.phi_to_vec(np.asarray(Phi, dtype=float))
    prec = mcmc.phi_prior_precision(spec, kappa1, kappa2)
    return float(0.5 * np.sum(np.log(prec))
                 - 0.5 * phi.shape[0] * np.log(2.0 * np.pi)
                 - 0.5 * np.sum(prec * phi * phi))


def log_parameter_prior(theta: np.ndarray, spec: ModelSpec) -> float:
    """log p(Phi) p(B) p(beta) p(alpha), alpha normalizer included."""
    draw = theta_to_draw(theta, spec)
    if draw.alpha <= 0:
        return -np.inf
    return (log_marginal_prior_phi(draw.Phi, spec)
            + mcmc.log_impact_prior(spec, draw.B, draw.beta, draw.alpha,
                                    include_alpha_normalizer=True))


# ---------------------------------------------------------------------------
# tuning construction

def build_tuning(chain, spec: ModelSpec, coverage: float = 0.95,
                 min_draws: int = 1000) -> TuningDensity:
    """Per-block truncated Gaussians fitted to the posterior draws.

    Blocks: the vectorized cycle coefficients, the free impact entries, the
    instrument loading when free, and the instrument noise scale on (0, w).
    """
    if len(chain.draws) < min_draws:
        raise TuningError(
            f"tuning requires at least {min_draws} kept draws, got {len(chain.draws)}"
        )
    X = parameter_matrix(chain, spec)
    k_phi = 9 * spec.p
    b_idx, beta_free = mcmc.free_vector_layout(spec)
    n_b = b_idx.shape[0]
    blocks = [ellipsoid_block("R_Phi", X[:, :k_phi], coverage),
              ellipsoid_block("R_B", X[:, k_phi:k_phi + n_b], coverage)]
    if beta_free:
        blocks.append(symmetric_interval_block("R_beta", X[:, k_phi + n_b],
                                               coverage))
    blocks.append(alpha_interval_block(X[:, -1], coverage))
    return TuningDensity(blocks=tuple(blocks))


# ---------------------------------------------------------------------------
# reweighting core (shared by both estimators and by the toy-model tests)

@dataclass(frozen=True)
class MarglikResult:
    log_ml: float
    mc_se: float
    n_draws: int
    estimator: Estimator

    def __post_init__(self):
        if np.isfinite(self.mc_se) and self.mc_se < 0:
            raise ValueError("mc_se must be non-negative")


def reweighted_log_ml(log_weights: np.ndarray,
                      n_batches: int = 20) -> tuple[float, float]:
    """log of the inverse mean weight, with a batch-means standard error.

    log_weights holds log[q(theta_r) / (p(y|theta_r) p(theta_r))] per draw;
    -inf entries (draws outside the tuning support) contribute zero weight.
    """
    w = np.asarray(log_weights, dtype=float)
    if w.ndim != 1 or w.size < n_batches:
        raise ValueError("need at least one draw per batch")
    finite = np.isfinite(w)
    if not finite.any():
        raise SupportError("all weights vanished; tuning support mismatch")
    shift = float(np.max(w[finite]))
    a = np.exp(w - shift, where=finite, out=np.zeros_like(w))
    mean_a = float(np.mean(a))
    log_ml = -(shift + np.log(mean_a))
    batch_means = np.array([np.mean(b) for b in np.array_split(a, n_batches)])
    se_a = float(np.std(batch_means, ddof=1)) / np.sqrt(n_batches)
    mc_se = se_a / mean_a
    return log_ml, mc_se


# ---------------------------------------------------------------------------
# the two estimators

def _cmgd(chain, spec: ModelSpec, y: np.ndarray, thin: int,
          n_batches: int, tuning: TuningDensity | None) -> MarglikResult:
    if tuning is None:
        tuning = build_tuning(chain, spec)
    X = parameter_matrix(chain, spec)[::thin]
    log_w = np.empty(X.shape[0])
    counts: dict[str, int] = {}
    for r, theta in enumerate(X):
        lq = tuning.logpdf(theta)
        if lq == -np.inf:
            for name in tuning.violated_blocks(theta):
                counts[name] = counts.get(name, 0) + 1
            log_w[r] = -np.inf
            continue
        draw = theta_to_draw(theta, spec)
        ll = log_integrated_likelihood(draw.Phi, draw.B, draw.alpha,
                                       draw.beta, spec, y)
        log_w[r] = lq - ll - log_parameter_prior(theta, spec)
    try:
        log_ml, mc_se = reweighted_log_ml(log_w, n_batches)
    except SupportError as exc:
        worst = max(counts, key=counts.get) if counts else "unknown"
        raise SupportError(
            f"all weights vanished; most frequently violated region: {worst}"
        ) from exc
    return MarglikResult(log_ml=log_ml, mc_se=mc_se, n_draws=X.shape[0],
                         estimator=Estimator.CMGD)


def _log_joint_state_density(sys: gaussian.GaussianSystem, tau: np.ndarray,
                             y_flat: np.ndarray) -> float:
    """log p(y | tau, theta) p(tau | theta) as one joint Gaussian in z."""
    z = gaussian.interleave(tau, y_flat, sys.T)
    w = sys.apply_H(z) - sys.tau_tilde
    quad = sys.omega_quad(w)
    n = z.shape[0]
    # |H| = 1, so log|K_z| = -log|Omega|
    return -0.5 * (n * np.log(2.0 * np.pi) + sys.logdet_omega + quad)


def _gd(chain, spec: ModelSpec, y: np.ndarray, thin: int,
        n_batches: int) -> MarglikResult:
    T = y.shape[0]
    if T > 40:
        raise ValueError(
            "the plain reweighting estimator is a small-sample benchmark; "
            "T is capped at 40"
        )
    draws = chain.draws[::thin]
    if any(d.tau is None for d in draws):
        raise ValueError("the full-parameter estimator needs stored state paths")
    X_par = parameter_matrix(chain, spec)[::thin]
    X_tau = np.asarray([d.tau for d in draws])
    X_kap = np.asarray([[d.kappa1, d.kappa2] for d in draws])

    k_phi = 9 * spec.p
    b_idx, beta_free = mcmc.free_vector_layout(spec)
    n_b = b_idx.shape[0]
    blocks = [ellipsoid_block("R_tau", X_tau),
              ellipsoid_block("R_Phi", X_par[:, :k_phi]),
              ellipsoid_block("R_B", X_par[:, k_phi:k_phi + n_b])]
    if beta_free:
        blocks.append(symmetric_interval_block("R_beta", X_par[:, k_phi + n_b]))
    blocks.append(alpha_interval_block(X_par[:, -1]))
    blocks.append(symmetric_interval_block("R_kappa1", X_kap[:, 0],
                                           lower=0.0, upper=1.0))
    blocks.append(symmetric_interval_block("R_kappa2", X_kap[:, 1],
                                           lower=0.0, upper=1.0))
    tuning = TuningDensity(blocks=tuple(blocks))

    y_flat = y.reshape(-1)
    log_w = np.empty(len(draws))
    counts: dict[str, int] = {}
    for r, d in enumerate(draws):
        theta_full = np.concatenate([d.tau, X_par[r], X_kap[r]])
        lq = tuning.logpdf(theta_full)
        if lq == -np.inf:
            for name in tuning.violated_blocks(theta_full):
                counts[name] = counts.get(name, 0) + 1
            log_w[r] = -np.inf
            continue
        mats = assemble_structural(spec, d)
        sys = gaussian.build_joint(spec, mats, spec.prior, T)
        log_joint = _log_joint_state_density(sys, d.tau, y_flat)
        # uniform kappa priors contribute zero in logs
        log_prior = (log_phi_prior_conditional(spec, d.Phi, d.kappa1, d.kappa2)
                     + mcmc.log_impact_prior(spec, d.B, d.beta, d.alpha,
                                             include_alpha_normalizer=True))
        log_w[r] = lq - log_joint - log_prior
    try:
        log_ml, mc_se = reweighted_log_ml(log_w, n_batches)
    except SupportError as exc:
        worst = max(counts, key=counts.get) if counts else "unknown"
        raise SupportError(
            f"all weights vanished; most frequently violated region: {worst}"
        ) from exc
    return MarglikResult(log_ml=log_ml, mc_se=mc_se, n_draws=len(draws),
                         estimator=Estimator.GD)


def estimate_ml(chain, spec: ModelSpec, data,
                estimator: Estimator | str = Estimator.CMGD, *,
                thin: int = 1, n_batches: int = 20,
                tuning: TuningDensity | None = None) -> MarglikResult:
    """Marginal likelihood of the data under one model variant."""
    estimator = Estimator(estimator)
    y = data.to_matrix() if hasattr(data, "to_matrix") else np.asarray(data, dtype=float)
    if estimator is Estimator.CMGD:
        return _cmgd(chain, spec, y, thin, n_batches, tuning)
    return _gd(chain, spec, y, thin, n_batches)
