"""Banded joint Gaussian representation of (tau, y) and precision sampling.

The stacked model is written as H z = tau_tilde + e with e ~ N(0, Omega),
where z interleaves the initial states, the period-t trends and the period-t
observations.  Everything downstream (state smoothing, simulation, the
integrated likelihood) works off the precision K_z = H' Omega^{-1} H, which
stays banded under the interleaved ordering.  H and Omega^{-1} are never
materialized: both are applied blockwise, and K_z is assembled directly in
lower banded storage from small 7x7 products.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .model import ModelSpec, PriorConfig, StructuralMatrices

XI1 = np.array([[-1.0, 2.0, 0.0, 0.0],
                [0.0, 0.0, 1.0, 0.0],
                [0.0, 0.0, 0.0, 1.0]])
XI2 = np.array([[0.0, -1.0, 0.0, 0.0],
                [0.0, 0.0, 0.0, 0.0],
                [0.0, 0.0, 0.0, 0.0]])

Q_TILDE = np.array([[-1.0, 0.0, 0.0],
                    [0.0, -1.0, 0.0],
                    [0.0, -1.0, -1.0]])


def q_matrix() -> np.ndarray:
    """Per-period map from (tau_t, y_t) to (tau_t, c_t, m_t)."""
    Q = np.zeros((7, 7))
    Q[:3, :3] = np.eye(3)
    Q[3:6, :3] = Q_TILDE
    Q[3:6, 3:6] = np.eye(3)
    Q[6, 6] = 1.0
    return Q


# Xi blocks embedded in the 7-row period layout (rows 3: are zero)
def _xi_embedded(Xi: np.ndarray) -> np.ndarray:
    out = np.zeros((7, 4))
    out[:3] = Xi
    return out


class DegeneracyError(ArithmeticError):
    """A factorization failed; the system is numerically degenerate."""


@lru_cache(maxsize=32)
def _z_index_sets(T: int) -> tuple[np.ndarray, np.ndarray]:
    """Positions of the tau and y coordinates inside the interleaved z."""
    idx_tau = [0, 1, 2, 3]
    idx_y = []
    for t in range(T):
        base = 4 + 7 * t
        idx_tau.extend(range(base, base + 3))
        idx_y.extend(range(base + 3, base + 7))
    return np.array(idx_tau), np.array(idx_y)


def interleave(tau: np.ndarray, y: np.ndarray, T: int) -> np.ndarray:
    idx_tau, idx_y = _z_index_sets(T)
    z = np.empty(4 + 7 * T)
    z[idx_tau] = tau
    z[idx_y] = y
    return z


@dataclass(frozen=True)
class ConditionalGaussian:
    """Gaussian in precision form with a banded Cholesky factor attached."""

    mean: np.ndarray
    prec_banded: np.ndarray   # lower banded storage of the precision
    chol_banded: np.ndarray   # lower banded factor from scipy cholesky_banded
    bandwidth: int

    @property
    def logdet_precision(self) -> float:
        return 2.0 * float(np.sum(np.log(self.chol_banded[0])))

    @property
    def precision(self) -> sp.csr_matrix:
        return _banded_to_csr(self.prec_banded, self.bandwidth)


def _banded_to_csr(ab: np.ndarray, bw: int) -> sp.csr_matrix:
    """Symmetric CSR matrix from lower banded storage."""
    n = ab.shape[1]
    rows, cols, vals = [], [], []
    for d in range(bw + 1):
        m = n - d
        rows.append(np.arange(d, n))
        cols.append(np.arange(m))
        vals.append(ab[d, :m])
        if d > 0:
            rows.append(np.arange(m))
            cols.append(np.arange(d, n))
            vals.append(ab[d, :m])
    K = sp.coo_matrix((np.concatenate(vals),
                       (np.concatenate(rows), np.concatenate(cols))),
                      shape=(n, n)).tocsr()
    return K


@dataclass(frozen=True)
class GaussianSystem:
    """Joint representation of (tau, y) for fixed structural matrices.

    The precision of z is held in lower banded storage; H and Omega^{-1} are
    applied through their block structure.
    """

    T: int
    p: int
    A_tilde: np.ndarray       # (n_lags, 7, 7)
    V00_inv: np.ndarray       # (4, 4)
    sigma_inv: np.ndarray     # (7, 7)
    tau_tilde: np.ndarray
    mu_z: np.ndarray
    K_banded: np.ndarray      # lower banded storage of K_z
    logdet_omega: float
    bandwidth: int

    @property
    def n_lags(self) -> int:
        return self.A_tilde.shape[0]

    @property
    def idx_tau(self) -> np.ndarray:
        return _z_index_sets(self.T)[0]

    @property
    def idx_y(self) -> np.ndarray:
        return _z_index_sets(self.T)[1]

    @property
    def mu_tau(self) -> np.ndarray:
        return self.mu_z[self.idx_tau]

    @property
    def mu_y(self) -> np.ndarray:
        return self.mu_z[self.idx_y]

    @property
    def K_z(self) -> sp.csr_matrix:
        return _banded_to_csr(self.K_banded, self.bandwidth)

    def apply_H(self, z: np.ndarray) -> np.ndarray:
        """H z through the block structure, never forming H."""
        T = self.T
        Q = q_matrix()
        zb = np.asarray(z, dtype=float)[4:].reshape(T, 7)
        eta = zb @ Q.T
        w = eta.copy()
        for i in range(1, self.n_lags + 1):
            if T > i:
                w[i:] -= eta[:-i] @ self.A_tilde[i - 1].T
        z0 = np.asarray(z, dtype=float)[:4]
        w[0, :3] -= XI1 @ z0
        if T >= 2:
            w[1, :3] -= XI2 @ z0
        return np.concatenate([z0, w.reshape(-1)])

    def apply_Ht(self, w: np.ndarray) -> np.ndarray:
        """H' w through the block structure."""
        T = self.T
        Q = q_matrix()
        wb = np.asarray(w, dtype=float)[4:].reshape(T, 7)
        out_blocks = wb @ Q
        for i in range(1, self.n_lags + 1):
            if T > i:
                out_blocks[:-i] -= (wb[i:] @ self.A_tilde[i - 1]) @ Q
        out0 = np.asarray(w, dtype=float)[:4].copy()
        out0 -= XI1.T @ wb[0, :3]
        if T >= 2:
            out0 -= XI2.T @ wb[1, :3]
        return np.concatenate([out0, out_blocks.reshape(-1)])

    def apply_omega_inv(self, w: np.ndarray) -> np.ndarray:
        wb = np.asarray(w, dtype=float)
        out = np.empty_like(wb)
        out[:4] = self.V00_inv @ wb[:4]
        out[4:] = (wb[4:].reshape(self.T, 7) @ self.sigma_inv.T).reshape(-1)
        return out

    def omega_quad(self, w: np.ndarray) -> float:
        return float(np.asarray(w) @ self.apply_omega_inv(w))

    def apply_K(self, d: np.ndarray) -> np.ndarray:
        return self.apply_Ht(self.apply_omega_inv(self.apply_H(d)))


def _banded_cholesky_from_ab(ab: np.ndarray) -> np.ndarray:
    try:
        return sla.cholesky_banded(ab, lower=True, check_finite=False)
    except (np.linalg.LinAlgError, sla.LinAlgError) as exc:
        raise DegeneracyError(f"banded Cholesky failed: {exc}") from exc


def _solve_upper_from_lower_banded(cb: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve L' x = rhs where cb stores L in lower banded form."""
    bw = cb.shape[0] - 1
    n = cb.shape[1]
    ub = np.zeros((bw + 1, n))
    for d in range(bw + 1):
        if d == 0:
            ub[bw] = cb[0]
        else:
            ub[bw - d, d:] = cb[d, :-d]
    return sla.solve_banded((0, bw), ub, rhs, check_finite=False)


def _assemble_K_banded(A_tilde: np.ndarray, sigma_inv: np.ndarray,
                       V00_inv: np.ndarray, T: int) -> tuple[np.ndarray, int]:
    """Lower banded storage of H' Omega^{-1} H by blockwise accumulation.

    Writing C_0 = Q and C_i = -A_i Q, the period block (s, s-d) of K equals
    sum_a C_a' Sigma^{-1} C_{a+d} over the lags a that keep period s+a inside
    the sample; the initial-state block adds the Xi terms for t = 1, 2.
    """
    L = A_tilde.shape[0]
    Q = q_matrix()
    C = np.empty((L + 1, 7, 7))
    C[0] = Q
    for i in range(1, L + 1):
        C[i] = -(A_tilde[i - 1] @ Q)
    # P[a, b] = C_a' Sigma^{-1} C_b
    SC = np.einsum("ij,bjk->bik", sigma_inv, C)
    P = np.einsum("aji,bjk->abik", C, SC)

    n = 4 + 7 * T
    bw = 7 * L + 6
    ab = np.zeros((bw + 1, n))

    tri_r, tri_c = np.tril_indices(7)
    for d in range(L + 1):
        if T - d <= 0:
            continue
        # interior value of the block diagonal, then right-edge truncations
        terms = P[np.arange(L - d + 1), np.arange(d, L + 1)]  # (L-d+1, 7, 7)
        blocks = np.broadcast_to(terms.sum(axis=0), (T - d, 7, 7)).copy()
        # block (s+d, s) sums lags a with row period s+d+a inside the sample
        prefix = np.cumsum(terms, axis=0)
        for s in range(max(T - L + 1, 1), T - d + 1):
            cap = T - s - d
            if cap < L - d:
                blocks[s - 1] = prefix[cap]
        if d == 0:
            rs, cs = tri_r, tri_c
        else:
            rs, cs = np.divmod(np.arange(49), 7)
        # columns of block entry (r, c) sit at 4 + c, stride 7
        for r, c in zip(rs, cs):
            ab[7 * d + r - c, 4 + c::7][:T - d] += blocks[:, r, c]

    # initial-state block and its coupling with periods 1 and 2
    Xi1e, Xi2e = _xi_embedded(XI1), _xi_embedded(XI2)
    K00 = V00_inv + Xi1e.T @ sigma_inv @ Xi1e
    if T >= 2:
        K00 = K00 + Xi2e.T @ sigma_inv @ Xi2e
    for r in range(4):
        for c in range(r + 1):
            ab[r - c, c] += K00[r, c]
    # block (period u, init) = sum_{t in {1,2}, 0 <= t-u <= L} C_{t-u}' Sinv (-Xi_t)
    couplings = []
    couplings.append((1, C[0].T @ sigma_inv @ (-Xi1e)))
    if T >= 2:
        if L >= 1:
            couplings.append((1, C[1].T @ sigma_inv @ (-Xi2e)))
        couplings.append((2, C[0].T @ sigma_inv @ (-Xi2e)))
    for u, blk in couplings:
        row_base = 4 + 7 * (u - 1)
        for r in range(7):
            for c in range(4):
                ab[row_base + r - c, c] += blk[r, c]
    return ab, bw


def build_joint(spec: ModelSpec, mats: StructuralMatrices, prior: PriorConfig,
                T: int) -> GaussianSystem:
    """Assemble the banded precision representation of (tau, y).

    The mean of z is obtained by forward substitution on the block-triangular
    H (H has unit diagonal, so no inverse is ever formed).
    """
    p = spec.p
    if T <= p:
        raise ValueError("T must exceed the lag order p")
    try:
        L_sig = np.linalg.cholesky(mats.Sigma_tilde)
    except np.linalg.LinAlgError as exc:
        raise DegeneracyError("Sigma_tilde is not positive definite") from exc
    sigma_inv = sla.cho_solve((L_sig, True), np.eye(7), check_finite=False)
    sigma_inv = (sigma_inv + sigma_inv.T) / 2.0
    logdet_sigma = 2.0 * float(np.sum(np.log(np.diag(L_sig))))

    V00 = prior.V_tau00
    L00 = np.linalg.cholesky(V00)
    V00_inv = sla.cho_solve((L00, True), np.eye(4), check_finite=False)
    logdet_omega = 2.0 * float(np.sum(np.log(np.diag(L00)))) + T * logdet_sigma

    n_lags = mats.A_tilde.shape[0]
    ab, bandwidth = _assemble_K_banded(mats.A_tilde, sigma_inv, V00_inv, T)
    bound = 7 * (n_lags + 1) + 3
    if bandwidth > bound:
        raise AssertionError(
            f"precision bandwidth {bandwidth} exceeds the bound {bound}; "
            "the interleaved ordering is broken"
        )

    # Forward substitution for the mean: eta_t = sum_i A_i eta_{t-i} + Xi_t tau00.
    A = mats.A_tilde
    eta_mean = np.zeros((T + 1, 7))  # index 0 unused; eta_mean[t] for t >= 1
    tau00 = prior.tau00_mean
    for t in range(1, T + 1):
        acc = np.zeros(7)
        for i in range(1, min(n_lags, t - 1) + 1):
            acc += A[i - 1] @ eta_mean[t - i]
        if t == 1:
            acc[:3] += XI1 @ tau00
        elif t == 2:
            acc[:3] += XI2 @ tau00
        eta_mean[t] = acc
    mu_z = np.empty(4 + 7 * T)
    mu_z[:4] = tau00
    eta_body = eta_mean[1:]
    mu_blocks = mu_z[4:].reshape(T, 7)
    mu_blocks[:, :3] = eta_body[:, :3]
    mu_blocks[:, 3:6] = eta_body[:, 3:6] - eta_body[:, :3] @ Q_TILDE.T
    mu_blocks[:, 6] = eta_body[:, 6]

    tau_tilde = np.zeros(4 + 7 * T)
    tau_tilde[:4] = tau00
    return GaussianSystem(T=T, p=p, A_tilde=mats.A_tilde.copy(),
                          V00_inv=V00_inv, sigma_inv=sigma_inv,
                          tau_tilde=tau_tilde, mu_z=mu_z, K_banded=ab,
                          logdet_omega=logdet_omega, bandwidth=bandwidth)


@lru_cache(maxsize=64)
def _sub_banded_plan(n: int, bw: int, keep_kind: str,
                     T: int) -> tuple[np.ndarray, np.ndarray, int, int]:
    """Cached gather plan mapping banded K_z entries to K[keep, keep] entries.

    keep_kind selects the tau or y coordinate set of the interleaved z; the
    plan returns flat source indices into the (bw+1, n) storage, flat target
    indices into the (sub_bw+1, m) storage, plus (m, sub_bw).
    """
    keep = _z_index_sets(T)[0 if keep_kind == "tau" else 1]
    m = keep.shape[0]
    pos = np.full(n, -1)
    pos[keep] = np.arange(m)
    src, dst_r, dst_c = [], [], []
    for d in range(bw + 1):
        cols = np.arange(n - d)
        pr = pos[cols + d]
        pc = pos[cols]
        mask = (pr >= 0) & (pc >= 0)
        if not mask.any():
            continue
        src.append(d * n + cols[mask])
        dst_r.append(pr[mask] - pc[mask])
        dst_c.append(pc[mask])
    dst_r = np.concatenate(dst_r)
    dst_c = np.concatenate(dst_c)
    sub_bw = int(dst_r.max()) if dst_r.size else 0
    return (np.concatenate(src), dst_r * m + dst_c, m, sub_bw)


def _extract_sub_banded(ab: np.ndarray, bw: int, keep_kind: str,
                        T: int) -> tuple[np.ndarray, int]:
    """Banded storage of K[keep, keep] for the tau or y coordinate set."""
    src, dst, m, sub_bw = _sub_banded_plan(ab.shape[1], bw, keep_kind, T)
    sub = np.zeros((sub_bw + 1) * m)
    sub[dst] = ab.reshape(-1)[src]
    return sub.reshape(sub_bw + 1, m), sub_bw


def _condition(sys: GaussianSystem, keep_kind: str, keep: np.ndarray,
               given: np.ndarray, value: np.ndarray) -> ConditionalGaussian:
    n = sys.mu_z.shape[0]
    d = np.zeros(n)
    d[given] = value - sys.mu_z[given]
    rhs = sys.apply_K(d)[keep]
    sub_ab, sub_bw = _extract_sub_banded(sys.K_banded, sys.bandwidth,
                                         keep_kind, sys.T)
    cb = _banded_cholesky_from_ab(sub_ab)
    adj = sla.cho_solve_banded((cb, True), rhs, check_finite=False)
    mean = sys.mu_z[keep] - adj
    return ConditionalGaussian(mean=mean, prec_banded=sub_ab,
                               chol_banded=cb, bandwidth=sub_bw)


def condition_on_data(sys: GaussianSystem, y: np.ndarray) -> ConditionalGaussian:
    """Posterior of the state path tau given the stacked observations y."""
    y = np.asarray(y, dtype=float)
    if y.shape != (4 * sys.T,):
        raise ValueError(f"y must have length {4 * sys.T}")
    return _condition(sys, "tau", sys.idx_tau, sys.idx_y, y)


def condition_on_states(sys: GaussianSystem, tau: np.ndarray) -> ConditionalGaussian:
    """Distribution of the stacked observations y given the state path tau."""
    tau = np.asarray(tau, dtype=float)
    if tau.shape != (4 + 3 * sys.T,):
        raise ValueError(f"tau must have length {4 + 3 * sys.T}")
    return _condition(sys, "y", sys.idx_y, sys.idx_tau, tau)


def sample_precision_gaussian(cg: ConditionalGaussian,
                              rng: np.random.Generator) -> np.ndarray:
    """One exact draw via the banded Cholesky factor of the precision."""
    z = rng.standard_normal(cg.mean.shape[0])
    return cg.mean + _solve_upper_from_lower_banded(cg.chol_banded, z)


@dataclass(frozen=True)
class MarginalY:
    """Factorized handle on the Gaussian marginal of y.

    The log-density is evaluated through banded solves only: the dense 4T x 4T
    covariance of y is never formed.  The identity used is
    log p(y) = log p(tau_hat, y) - log p(tau_hat | y), which reduces to the
    Schur-complement form because H has unit determinant.
    """

    sys: GaussianSystem

    @property
    def mu_y(self) -> np.ndarray:
        return self.sys.mu_y

    def logpdf(self, y: np.ndarray) -> float:
        sys = self.sys
        cg = condition_on_data(sys, y)
        z_star = interleave(cg.mean, np.asarray(y, dtype=float), sys.T)
        w = sys.apply_H(z_star) - sys.tau_tilde
        quad = sys.omega_quad(w)
        n_y = 4 * sys.T
        return (-0.5 * n_y * np.log(2.0 * np.pi)
                - 0.5 * (sys.logdet_omega + cg.logdet_precision)
                - 0.5 * quad)


def marginal_of_y(sys: GaussianSystem) -> MarginalY:
    return MarginalY(sys=sys)
