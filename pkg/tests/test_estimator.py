import numpy as np
import pytest
from sklearn.base import clone

from smiv_helpers import make_spec, random_draw
from smuciv import SMUCIVEstimator
from smuciv.data import simulate_dgp
from smuciv.mcmc import companion_spectral_radius


@pytest.fixture(scope="module")
def sample():
    spec = make_spec(p=1, seed=0, tau00_mean=np.zeros(4))
    rng = np.random.default_rng(1)
    while True:
        d = random_draw(spec, rng, phi_scale=0.15)
        if companion_spectral_radius(d.Phi) < 0.9:
            break
    data, tau, _ = simulate_dgp(spec, d, 50, rng)
    return data, tau


class TestSklearnContract:
    def test_get_set_params_and_clone(self):
        est = SMUCIVEstimator(p=2, n_keep=100, seed=5)
        params = est.get_params()
        assert params["p"] == 2 and params["seed"] == 5
        est2 = clone(est)
        assert est2.get_params() == params
        est.set_params(p=3)
        assert est.p == 3

    def test_predict_before_fit_raises(self):
        from sklearn.exceptions import NotFittedError
        with pytest.raises(NotFittedError):
            SMUCIVEstimator().predict()

    def test_rejects_bad_input_shape(self):
        est = SMUCIVEstimator(n_burn=10, n_keep=10)
        with pytest.raises(ValueError):
            est.fit(np.zeros((10, 3)))


class TestFit:
    def test_fit_predict_shapes(self, sample):
        data, tau = sample
        est = SMUCIVEstimator(p=1, n_burn=100, n_keep=300, seed=2)
        est.fit(data)
        assert len(est.chain_.draws) == 300
        pred = est.predict()
        assert pred.shape == (50, 4)
        # the posterior-median growth trend tracks the true trend loosely
        true_g_star = tau[4:].reshape(50, 3)[:, 0]
        assert np.corrcoef(pred[:, 0], true_g_star)[0, 1] > 0.9

    def test_accepts_plain_array(self, sample):
        data, _ = sample
        est = SMUCIVEstimator(p=1, n_burn=50, n_keep=60, seed=3)
        est.fit(data.to_matrix())
        assert est.data_.T == 50

    def test_deterministic_refit(self, sample):
        data, _ = sample
        a = SMUCIVEstimator(p=1, n_burn=50, n_keep=40, seed=4).fit(data)
        b = SMUCIVEstimator(p=1, n_burn=50, n_keep=40, seed=4).fit(data)
        for da, db in zip(a.chain_.draws, b.chain_.draws):
            assert np.array_equal(da.Phi, db.Phi)
            assert da.alpha == db.alpha

    def test_multichain_pools_draws(self, sample):
        data, _ = sample
        est = SMUCIVEstimator(p=1, n_burn=30, n_keep=25, seed=5, n_chains=2)
        est.fit(data)
        assert len(est.chains_) == 2
        assert len(est.chain_.draws) == 50
        # chains must differ: independent streams
        assert not np.array_equal(est.chains_[0].draws[-1].Phi,
                                  est.chains_[1].draws[-1].Phi)

    def test_summaries(self, sample):
        data, _ = sample
        est = SMUCIVEstimator(p=1, n_burn=100, n_keep=1200, seed=6, horizon=6)
        est.fit(data)
        irf = est.impulse_responses()
        assert irf.responses.shape == (1200, 9, 7)
        ts = est.trend_summary()
        assert ts.q50.shape == (4, 50)
        ml = est.log_marginal_likelihood()
        assert np.isfinite(ml.log_ml)
        assert est.score() == ml.log_ml
