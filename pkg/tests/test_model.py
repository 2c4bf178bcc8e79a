import numpy as np
import pytest

from smuciv.model import (MP_SHOCK, ModelSpec, ParameterDraw, PriorConfig,
                          RestrictionError, Variant, assemble_structural,
                          check_restrictions, default_b_mean, restriction_mask)


def make_prior(**kw):
    base = dict(sigma_sq=np.array([1.0, 2.0, 0.5]),
                tau00_mean=np.zeros(4), beta0=0.5)
    base.update(kw)
    return PriorConfig(**base)


def random_draw(spec, rng, tau=None):
    mask = restriction_mask(spec.variant)
    B = rng.standard_normal((6, 6)) * mask[:6, :6]
    beta = float(rng.standard_normal()) if mask[6, 5] else 0.0
    return ParameterDraw(Phi=0.1 * rng.standard_normal((spec.p, 3, 3)), B=B,
                         beta=beta, alpha=abs(rng.standard_normal()) + 0.1,
                         kappa1=0.3, kappa2=0.4, tau=tau)


class TestRestrictionMask:
    def test_free_counts(self):
        counts = {Variant.BASELINE: 38, Variant.R1: 35, Variant.R2: 37,
                  Variant.R3: 19, Variant.R4: 7}
        for variant, n in counts.items():
            assert restriction_mask(variant).sum() == n

    def test_instrument_row_zeros(self):
        for variant in Variant:
            mask = restriction_mask(variant)
            assert not mask[6, :5].any()
            assert mask[6, 6]

    def test_trend_columns_free_only_in_baseline_structure(self):
        mask = restriction_mask(Variant.R3)
        assert not mask[0:3, 3:6].any()
        assert not mask[3:6, 0:3].any()
        assert mask[:3, :3].all() and mask[3:6, 3:6].all()

    def test_r1_pins_mp_column_of_trends(self):
        mask = restriction_mask(Variant.R1)
        assert not mask[0:3, MP_SHOCK].any()
        assert mask[6, 5]

    def test_r2_pins_beta_only(self):
        mask = restriction_mask(Variant.R2)
        assert not mask[6, 5]
        assert mask[:6, :6].all()

    def test_r4_diagonal(self):
        mask = restriction_mask(Variant.R4)
        assert (mask[:6, :6] == np.eye(6, dtype=bool)).all()

    def test_mask_read_only_and_cached(self):
        mask = restriction_mask(Variant.BASELINE)
        assert mask is restriction_mask(Variant.BASELINE)
        with pytest.raises(ValueError):
            mask[0, 0] = False


class TestPriorConfig:
    def test_default_b_mean(self):
        b = default_b_mean()
        assert np.allclose(np.diag(b), [0.1, 0.1, 0.1, 1.0, 1.0, 1.0])
        assert np.allclose(b - np.diag(np.diag(b)), 0.0)

    def test_validation(self):
        with pytest.raises(ValueError):
            make_prior(sigma_sq=np.array([1.0, -1.0, 1.0]))
        with pytest.raises(ValueError):
            make_prior(tau00_mean=np.zeros(3))
        with pytest.raises(ValueError):
            make_prior(V_b=0.0)
        with pytest.raises(ValueError):
            make_prior(V_tau00=np.zeros((4, 4)))

    def test_phi_prior_variances(self):
        pr = make_prior()
        V = pr.phi_prior_variances(3)
        assert V.shape == (3, 3, 3)
        for l in range(1, 4):
            for i in range(3):
                for j in range(3):
                    if i == j:
                        assert V[l - 1, i, j] == pytest.approx(1.0 / l**2)
                    else:
                        assert V[l - 1, i, j] == pytest.approx(
                            pr.sigma_sq[i] / (l**2 * pr.sigma_sq[j]))


class TestModelSpec:
    def test_rejects_bad_lag(self):
        with pytest.raises(ValueError):
            ModelSpec(p=0, prior=make_prior())

    def test_variant_coercion(self):
        spec = ModelSpec(p=1, prior=make_prior(), variant="r3")
        assert spec.variant is Variant.R3


class TestParameterDraw:
    def test_validation(self):
        ok = dict(Phi=np.zeros((1, 3, 3)), B=np.eye(6), beta=0.1, alpha=1.0,
                  kappa1=0.5, kappa2=0.5)
        ParameterDraw(**ok)
        with pytest.raises(ValueError):
            ParameterDraw(**{**ok, "alpha": 0.0})
        with pytest.raises(ValueError):
            ParameterDraw(**{**ok, "kappa1": 1.0})
        with pytest.raises(ValueError):
            ParameterDraw(**{**ok, "B": np.eye(5)})


class TestAssembly:
    def test_trend_lag_structure(self):
        rng = np.random.default_rng(0)
        for p in (1, 2, 3):
            spec = ModelSpec(p=p, prior=make_prior())
            mats = assemble_structural(spec, random_draw(spec, rng))
            n_lags = max(p, 2)
            assert mats.A_tilde.shape == (n_lags, 7, 7)
            assert np.allclose(mats.A_tilde[0, :3, :3], np.diag([2.0, 1.0, 1.0]))
            assert np.allclose(mats.A_tilde[1, :3, :3], np.diag([-1.0, 0.0, 0.0]))
            # instrument row and column carry no dynamics
            assert np.allclose(mats.A_tilde[:, 6, :], 0.0)
            assert np.allclose(mats.A_tilde[:, :, 6], 0.0)
            # no trend-cycle coupling in the dynamics
            assert np.allclose(mats.A_tilde[:, :3, 3:], 0.0)
            assert np.allclose(mats.A_tilde[:, 3:, :3], 0.0)

    def test_cycle_blocks_match_phi(self):
        rng = np.random.default_rng(1)
        spec = ModelSpec(p=3, prior=make_prior())
        draw = random_draw(spec, rng)
        mats = assemble_structural(spec, draw)
        for i in range(3):
            assert np.allclose(mats.A_tilde[i, 3:6, 3:6], draw.Phi[i])

    def test_b_tilde_layout(self):
        rng = np.random.default_rng(2)
        spec = ModelSpec(p=1, prior=make_prior())
        draw = random_draw(spec, rng)
        mats = assemble_structural(spec, draw)
        assert np.allclose(mats.B_tilde[:6, :6], draw.B)
        assert mats.B_tilde[6, 5] == draw.beta
        assert mats.B_tilde[6, 6] == draw.alpha
        assert np.allclose(mats.B_tilde[6, :5], 0.0)
        assert np.allclose(mats.B_tilde[:6, 6], 0.0)
        assert np.allclose(mats.Sigma_tilde, mats.B_tilde @ mats.B_tilde.T)

    def test_restriction_enforcement(self):
        rng = np.random.default_rng(3)
        spec = ModelSpec(p=1, prior=make_prior(), variant=Variant.R4)
        draw = random_draw(spec, rng)
        bad = ParameterDraw(Phi=draw.Phi, B=np.ones((6, 6)), beta=0.0,
                            alpha=1.0, kappa1=0.5, kappa2=0.5)
        with pytest.raises(RestrictionError):
            check_restrictions(spec, bad)
        bad_beta = ParameterDraw(Phi=draw.Phi, B=draw.B, beta=0.3, alpha=1.0,
                                 kappa1=0.5, kappa2=0.5)
        with pytest.raises(RestrictionError):
            check_restrictions(spec, bad_beta)
