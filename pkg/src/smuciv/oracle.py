"""Brute-force reference implementations used only by tests.

Everything here is deliberately dense and literal: matrices are formed
explicitly and inverted with generic routines, so these functions stay
independent of the banded machinery they are used to validate.  Instances
are guarded to small T since the cost is O(T^3).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad

from .model import ModelSpec, PriorConfig, StructuralMatrices

_XI1 = np.array([[-1.0, 2.0, 0.0, 0.0],
                 [0.0, 0.0, 1.0, 0.0],
                 [0.0, 0.0, 0.0, 1.0]])
_XI2 = np.array([[0.0, -1.0, 0.0, 0.0],
                 [0.0, 0.0, 0.0, 0.0],
                 [0.0, 0.0, 0.0, 0.0]])


def _q_dense() -> np.ndarray:
    Q = np.zeros((7, 7))
    Q[:3, :3] = np.eye(3)
    Q[3:6, :3] = np.array([[-1.0, 0.0, 0.0],
                           [0.0, -1.0, 0.0],
                           [0.0, -1.0, -1.0]])
    Q[3:6, 3:6] = np.eye(3)
    Q[6, 6] = 1.0
    return Q


@dataclass(frozen=True)
class DenseGaussian:
    mean: np.ndarray
    cov: np.ndarray
    precision: np.ndarray

    def logpdf(self, x: np.ndarray) -> float:
        d = np.asarray(x) - self.mean
        sign, logdet = np.linalg.slogdet(self.cov)
        if sign <= 0:
            raise np.linalg.LinAlgError("covariance is not positive definite")
        quad_form = d @ np.linalg.solve(self.cov, d)
        return -0.5 * (len(d) * np.log(2.0 * np.pi) + logdet + quad_form)

    def marginal(self, idx: np.ndarray) -> "DenseGaussian":
        cov = self.cov[np.ix_(idx, idx)]
        return DenseGaussian(self.mean[idx], cov, np.linalg.inv(cov))

    def conditional(self, keep: np.ndarray, given: np.ndarray,
                    value: np.ndarray) -> "DenseGaussian":
        S_kk = self.cov[np.ix_(keep, keep)]
        S_kg = self.cov[np.ix_(keep, given)]
        S_gg = self.cov[np.ix_(given, given)]
        gain = S_kg @ np.linalg.inv(S_gg)
        mean = self.mean[keep] + gain @ (value - self.mean[given])
        cov = S_kk - gain @ S_kg.T
        cov = (cov + cov.T) / 2.0
        return DenseGaussian(mean, cov, np.linalg.inv(cov))


def _z_indices(T: int) -> tuple[np.ndarray, np.ndarray]:
    idx_tau = [0, 1, 2, 3]
    idx_y = []
    for t in range(T):
        base = 4 + 7 * t
        idx_tau.extend(range(base, base + 3))
        idx_y.extend(range(base + 3, base + 7))
    return np.array(idx_tau), np.array(idx_y)


def dense_joint(spec: ModelSpec, mats: StructuralMatrices, prior: PriorConfig,
                T: int) -> DenseGaussian:
    """Dense N(mu_z, K_z^{-1}) over the interleaved z, by literal formulas."""
    if T > 12:
        raise ValueError("dense oracle is guarded to T <= 12")
    n_lags = mats.A_tilde.shape[0]
    n = 4 + 7 * T
    H1 = np.eye(7 * T)
    for t in range(T):
        for i in range(1, min(n_lags, t) + 1):
            H1[7 * t:7 * t + 7, 7 * (t - i):7 * (t - i) + 7] = -mats.A_tilde[i - 1]
    Xi = np.zeros((7 * T, 4))
    Xi[0:3, :] = _XI1
    if T >= 2:
        Xi[7:10, :] = _XI2
    H2 = np.zeros((n, n))
    H2[:4, :4] = np.eye(4)
    H2[4:, :4] = -Xi
    H2[4:, 4:] = H1
    QT = np.zeros((n, n))
    QT[:4, :4] = np.eye(4)
    Q = _q_dense()
    for t in range(T):
        QT[4 + 7 * t:4 + 7 * (t + 1), 4 + 7 * t:4 + 7 * (t + 1)] = Q
    H = H2 @ QT
    Omega = np.zeros((n, n))
    Omega[:4, :4] = prior.V_tau00
    for t in range(T):
        Omega[4 + 7 * t:4 + 7 * (t + 1), 4 + 7 * t:4 + 7 * (t + 1)] = mats.Sigma_tilde
    tau_tilde = np.zeros(n)
    tau_tilde[:4] = prior.tau00_mean
    H_inv = np.linalg.inv(H)
    mean = H_inv @ tau_tilde
    cov = H_inv @ Omega @ H_inv.T
    cov = (cov + cov.T) / 2.0
    precision = H.T @ np.linalg.inv(Omega) @ H
    return DenseGaussian(mean, cov, (precision + precision.T) / 2.0)


def dense_tau_y_indices(T: int) -> tuple[np.ndarray, np.ndarray]:
    """Index sets of the tau and y coordinates inside z."""
    return _z_indices(T)


def dense_conditional_tau(joint: DenseGaussian, T: int,
                          y: np.ndarray) -> DenseGaussian:
    idx_tau, idx_y = _z_indices(T)
    return joint.conditional(idx_tau, idx_y, y)


def dense_marginal_y_logpdf(joint: DenseGaussian, T: int, y: np.ndarray) -> float:
    idx_tau, idx_y = _z_indices(T)
    return joint.marginal(idx_y).logpdf(y)


def local_level_joint(T: int, meas_var: float, state_var: float,
                      init_var: float, mean_prior_var: float = 0.0,
                      mean_prior_mean: float = 0.0) -> DenseGaussian:
    """Dense Gaussian of y for the univariate local-level toy model.

    y_t = mu + tau_t + eps_t with tau a random walk started at
    tau_0 ~ N(0, init_var).  With mean_prior_var > 0 the constant mu is
    integrated out under mu ~ N(mean_prior_mean, mean_prior_var); otherwise
    mu is fixed at mean_prior_mean.
    """
    t_idx = np.arange(1, T + 1)
    cov = init_var + state_var * np.minimum.outer(t_idx, t_idx)
    cov = cov + meas_var * np.eye(T) + mean_prior_var * np.ones((T, T))
    mean = np.full(T, mean_prior_mean)
    cov = (cov + cov.T) / 2.0
    return DenseGaussian(mean, cov, np.linalg.inv(cov))


def analytic_local_level_ml(y: np.ndarray, meas_var: float, state_var: float,
                            init_var: float, mean_prior_var: float = 0.0,
                            mean_prior_mean: float = 0.0) -> float:
    """Exact log marginal density of y for the local-level toy."""
    y = np.asarray(y, dtype=float)
    joint = local_level_joint(len(y), meas_var, state_var, init_var,
                              mean_prior_var, mean_prior_mean)
    return joint.logpdf(y)


def kalman_local_level_loglik(y: np.ndarray, meas_var: float, state_var: float,
                              init_var: float, mean: float = 0.0) -> float:
    """Prediction-error decomposition for the same toy, as a second oracle."""
    y = np.asarray(y, dtype=float)
    a = 0.0          # filtered mean of tau_t
    P = init_var
    ll = 0.0
    for obs in y:
        P_pred = P + state_var
        F = P_pred + meas_var
        v = obs - mean - a
        ll += -0.5 * (np.log(2.0 * np.pi * F) + v * v / F)
        gain = P_pred / F
        a = a + gain * v
        P = P_pred * (1.0 - gain)
    return ll


def quadrature_1d(f, a: float, b: float, tol: float = 1e-10) -> float:
    """Adaptive quadrature of f over (a, b) to absolute tolerance tol."""
    val, err = quad(f, a, b, epsabs=tol, epsrel=tol, limit=200)
    if err > 100 * max(tol, tol * abs(val)):
        raise RuntimeError(f"quadrature did not converge: estimate error {err}")
    return val
