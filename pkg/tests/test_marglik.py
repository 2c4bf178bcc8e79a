import numpy as np
import pytest
from scipy import special

from smiv_helpers import make_spec, random_draw
from smuciv import marglik, mcmc, oracle
from smuciv.data import simulate_dgp
from smuciv.model import ModelSpec, ParameterDraw, Variant, assemble_structural


class TestBlocks:
    def test_interval_block_normalization(self):
        rng = np.random.default_rng(0)
        x = 2.0 + 0.5 * rng.standard_normal(5000)
        blk = marglik.symmetric_interval_block("b", x)
        val = oracle.quadrature_1d(
            lambda v: np.exp(blk.logpdf(v)), blk.lower, blk.upper)
        assert val == pytest.approx(1.0, abs=1e-8)

    def test_interval_block_sampler(self):
        rng = np.random.default_rng(1)
        x = 1.0 + 0.3 * rng.standard_normal(4000)
        blk = marglik.symmetric_interval_block("b", x)
        draws = np.array([blk.sample(rng)[0] for _ in range(5000)])
        assert np.all((draws > blk.lower) & (draws < blk.upper))
        mean_ref = oracle.quadrature_1d(
            lambda v: v * np.exp(blk.logpdf(v)), blk.lower, blk.upper)
        assert draws.mean() == pytest.approx(mean_ref, abs=0.02)

    def test_alpha_block_coverage_equation(self):
        rng = np.random.default_rng(2)
        x = np.abs(0.8 + 0.3 * rng.standard_normal(4000))
        blk = marglik.alpha_interval_block(x, coverage=0.9)
        mass = (special.ndtr((blk.upper - blk.mean) / blk.sd)
                - special.ndtr((0.0 - blk.mean) / blk.sd))
        assert mass == pytest.approx(0.9, abs=1e-9)
        assert blk.lower == 0.0

    def test_alpha_block_degrades_when_positive_mass_small(self):
        rng = np.random.default_rng(3)
        x = np.abs(rng.standard_normal(2000)) * 0.5
        # force a mean near zero so the positive mass is close to 1/2
        x = x - x.mean() + 0.01
        blk = marglik.alpha_interval_block(x, coverage=0.95)
        assert blk.upper == np.inf

    def test_ellipsoid_block_normalization_mc(self):
        rng = np.random.default_rng(4)
        X = rng.standard_normal((3000, 3)) @ np.diag([1.0, 0.5, 2.0])
        blk = marglik.ellipsoid_block("e", X, coverage=0.9)
        # importance estimate of the total mass under the block density
        n = 200_000
        z = blk.mean + (blk.chol @ rng.standard_normal((3, n))).T
        logq = np.array([blk.logpdf(v) for v in z])
        base = np.array([
            -0.5 * 3 * np.log(2 * np.pi)
            - np.sum(np.log(np.diag(blk.chol)))
            - 0.5 * blk.mahalanobis_sq(v) for v in z])
        est = np.exp(logq - base, where=np.isfinite(logq),
                     out=np.zeros(n)).mean()
        assert est == pytest.approx(1.0, abs=0.02)

    def test_ellipsoid_sampler_stays_inside(self):
        rng = np.random.default_rng(5)
        X = rng.standard_normal((2000, 2))
        blk = marglik.ellipsoid_block("e", X)
        for _ in range(200):
            assert blk.contains(blk.sample(rng))


class TestReweighting:
    def test_conjugate_normal_toy(self):
        # prior theta ~ N(0,1), y | theta ~ N(theta,1): the reweighted
        # estimator must recover log N(y; 0, 2)
        rng = np.random.default_rng(6)
        y = 0.7
        post = rng.normal(y / 2.0, np.sqrt(0.5), size=40_000)
        blk = marglik.symmetric_interval_block("theta", post)
        tuning = marglik.TuningDensity(blocks=(blk,))

        def log_prior(t):
            return -0.5 * (np.log(2 * np.pi) + t * t)

        def log_lik(t):
            return -0.5 * (np.log(2 * np.pi) + (y - t)**2)

        log_w = np.array([tuning.logpdf(np.array([t])) - log_lik(t)
                          - log_prior(t) for t in post])
        log_ml, mc_se = marglik.reweighted_log_ml(log_w)
        truth = -0.5 * (np.log(2 * np.pi * 2.0) + y * y / 2.0)
        assert log_ml == pytest.approx(truth, abs=4 * mc_se + 1e-4)
        assert mc_se < 0.01

    def test_all_outside_support_raises(self):
        with pytest.raises(marglik.SupportError):
            marglik.reweighted_log_ml(np.full(100, -np.inf))


class TestMarginalPriorPhi:
    @pytest.mark.parametrize("p", [1, 2, 4])
    def test_matches_quadrature(self, p):
        spec = make_spec(p=p, seed=p)
        rng = np.random.default_rng(10 + p)
        Phi = 0.3 * rng.standard_normal((p, 3, 3))
        closed = marglik.log_marginal_prior_phi(Phi, spec)
        own, cross = mcmc.phi_shrinkage_scales(Phi, spec.prior.sigma_sq)
        base = spec.prior.phi_prior_variances(p)

        # the Gaussian factorizes over the own and cross groups, so the
        # kappa integrals separate into two 1-d quadratures
        def own_integrand(k1):
            out = 1.0
            for l in range(p):
                for i in range(3):
                    v = k1 * base[l, i, i]
                    out *= np.exp(-0.5 * Phi[l, i, i]**2 / v) / np.sqrt(
                        2 * np.pi * v)
            return out

        def cross_integrand(k2):
            out = 1.0
            for l in range(p):
                for i in range(3):
                    for j in range(3):
                        if i == j:
                            continue
                        v = k2 * base[l, i, j]
                        out *= np.exp(-0.5 * Phi[l, i, j]**2 / v) / np.sqrt(
                            2 * np.pi * v)
            return out

        ref = (np.log(oracle.quadrature_1d(own_integrand, 1e-12, 1.0,
                                           tol=1e-13))
               + np.log(oracle.quadrature_1d(cross_integrand, 1e-12, 1.0,
                                             tol=1e-13)))
        assert closed == pytest.approx(ref, abs=1e-6)

    def test_degenerate_point_raises(self):
        spec = make_spec(p=1, seed=20)
        with pytest.raises(ValueError):
            marglik.log_marginal_prior_phi(np.zeros((1, 3, 3)), spec)


class TestIntegratedLikelihood:
    def test_matches_dense_marginal(self):
        spec = make_spec(p=1, seed=30)
        rng = np.random.default_rng(31)
        draw = random_draw(spec, rng, phi_scale=0.2)
        data, _, _ = simulate_dgp(spec, draw, 8, rng)
        ll = marglik.log_integrated_likelihood(draw.Phi, draw.B, draw.alpha,
                                               draw.beta, spec, data)
        mats = assemble_structural(spec, draw)
        dense = oracle.dense_joint(spec, mats, spec.prior, 8)
        ref = oracle.dense_marginal_y_logpdf(dense, 8,
                                             data.to_matrix().reshape(-1))
        assert ll == pytest.approx(ref, abs=1e-8)


class TestVectorization:
    def test_theta_roundtrip(self):
        spec = make_spec(p=2, seed=40)
        rng = np.random.default_rng(41)
        d = random_draw(spec, rng)
        theta = np.concatenate([mcmc.phi_to_vec(d.Phi),
                                mcmc.pack_impact(spec, d.B, d.beta, d.alpha)])
        back = marglik.theta_to_draw(theta, spec)
        assert np.allclose(back.Phi, d.Phi)
        assert np.allclose(back.B, d.B)
        assert back.beta == pytest.approx(d.beta)
        assert back.alpha == pytest.approx(d.alpha)


@pytest.fixture(scope="module")
def small_posterior():
    spec = make_spec(p=1, seed=50, tau00_mean=np.zeros(4))
    rng = np.random.default_rng(51)
    truth = random_draw(spec, rng, phi_scale=0.15)
    data, _, _ = simulate_dgp(spec, truth, 20, rng)
    cfg = mcmc.SamplerConfig(n_burn=500, n_keep=2000, thin=1, seed=7)
    chain = mcmc.run_chain(spec, data, cfg)
    return spec, data, chain


# Reference evidence for the r4_posterior instance below, computed by
# defensive importance sampling over the 16 free parameters with the
# state-integrated likelihood: 120k draws from a Gaussian fitted to the
# parameter posterior with 1.5x inflated covariance, no zero weights,
# batch standard error 0.007.  Both reduced-draw estimators carry
# visible finite-sample reweighting bias at this chain length (the
# Gelfand-Dey variant upward by about two log points, the marginal
# variant downward by under one), so the margins below are calibrated
# to that, not to the reported mc_se.
R4_LOG_ML_REFERENCE = -197.86


@pytest.fixture(scope="module")
def r4_posterior():
    spec = make_spec(p=1, seed=50, tau00_mean=np.zeros(4),
                     variant=Variant.R4)
    rng = np.random.default_rng(51)
    truth = random_draw(spec, rng, phi_scale=0.15)
    data, _, _ = simulate_dgp(spec, truth, 20, rng)
    cfg = mcmc.SamplerConfig(n_burn=2000, n_keep=8000, thin=1, seed=7)
    chain = mcmc.run_chain(spec, data, cfg)
    return spec, data, chain


class TestEstimators:
    @pytest.mark.slow
    def test_cmgd_matches_reference(self, r4_posterior):
        spec, data, chain = r4_posterior
        r = marglik.estimate_ml(chain, spec, data, estimator="cmgd")
        assert np.isfinite(r.log_ml) and r.mc_se < 1.0
        assert abs(r.log_ml - R4_LOG_ML_REFERENCE) < 2.0

    @pytest.mark.slow
    def test_gd_matches_reference(self, r4_posterior):
        spec, data, chain = r4_posterior
        r = marglik.estimate_ml(chain, spec, data, estimator="gd")
        assert np.isfinite(r.log_ml)
        assert abs(r.log_ml - R4_LOG_ML_REFERENCE) < 3.5

    def test_thinning_changes_draw_count(self, small_posterior):
        spec, data, chain = small_posterior
        r = marglik.estimate_ml(chain, spec, data, thin=4)
        assert r.n_draws == 500

    def test_tuning_requires_enough_draws(self, small_posterior):
        spec, data, chain = small_posterior
        short = mcmc.PosteriorChain(draws=chain.draws[:100],
                                    accept_rate_B=0.3, seed=0, chain_index=0,
                                    config=chain.config)
        with pytest.raises(marglik.TuningError):
            marglik.estimate_ml(short, spec, data)

    def test_gd_cap(self, small_posterior):
        spec, data, chain = small_posterior
        big = np.zeros((50, 4))
        with pytest.raises(ValueError):
            marglik.estimate_ml(chain, spec, big, estimator="gd")
