"""Model objects: restriction variants, priors, and structural-matrix assembly.

The model decomposes (g, pi, r) into random-walk trends and a VAR(p) cycle,
augments the system with an instrument equation m_t = beta*eps_mp_t + alpha*v_t,
and stacks everything into a 7-variable structural VAR with coefficient
matrices A_tilde_1..A_tilde_p and impact matrix B_tilde.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache

import numpy as np

N_OBS = 3          # observable series excluding the instrument
N_SHOCKS = 6       # structural shocks in the core system
N_AUG = 7          # augmented system dimension (trends, cycles, instrument)
MP_SHOCK = 5       # column of B holding the monetary-policy shock (0-based)

PSI1 = np.diag([2.0, 1.0, 1.0])
PSI2 = np.diag([-1.0, 0.0, 0.0])


class Variant(str, Enum):
    BASELINE = "baseline"
    R1 = "r1"
    R2 = "r2"
    R3 = "r3"
    R4 = "r4"


class RestrictionError(ValueError):
    """A parameter draw violates the zero pattern of its variant."""


def default_b_mean() -> np.ndarray:
    b = np.zeros((6, 6))
    b[0, 0] = b[1, 1] = b[2, 2] = 0.1
    b[3, 3] = b[4, 4] = b[5, 5] = 1.0
    return b


@dataclass(frozen=True)
class PriorConfig:
    """Hyperparameters of the independent priors.

    sigma_sq holds the AR(p) residual variances of (g, pi, r) used for the
    cross-lag scaling of the hierarchical shrinkage prior on the cycle VAR.
    """

    sigma_sq: np.ndarray                      # length 3
    tau00_mean: np.ndarray                    # length 4: (g*_{-1}, g*_0, pi*_0, r*_0)
    beta0: float                              # 0.5 * sd of the instrument
    V_b: float = 0.01
    b_mean: np.ndarray = field(default_factory=default_b_mean)
    V_beta: float = 1.0
    V_alpha: float = 1.0
    alpha0: float = 0.0
    V_tau00: np.ndarray = field(default_factory=lambda: 100.0 * np.eye(4))

    def __post_init__(self):
        sigma_sq = np.asarray(self.sigma_sq, dtype=float)
        tau00 = np.asarray(self.tau00_mean, dtype=float)
        object.__setattr__(self, "sigma_sq", sigma_sq)
        object.__setattr__(self, "tau00_mean", tau00)
        if sigma_sq.shape != (3,) or np.any(sigma_sq <= 0):
            raise ValueError("sigma_sq must be 3 strictly positive variances")
        if tau00.shape != (4,):
            raise ValueError("tau00_mean must have length 4")
        for name in ("V_b", "V_beta", "V_alpha"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be strictly positive")
        V = np.asarray(self.V_tau00, dtype=float)
        object.__setattr__(self, "V_tau00", V)
        if V.shape != (4, 4) or np.any(np.linalg.eigvalsh((V + V.T) / 2) <= 0):
            raise ValueError("V_tau00 must be 4x4 positive definite")

    def phi_prior_variances(self, p: int) -> np.ndarray:
        """Minnesota-type prior variances for Phi, shape (p, 3, 3).

        Own lags get kappa1/l^2 and cross lags kappa2*sigma_i^2/(l^2 sigma_j^2);
        the kappa factors are left out here (they are sampled hyperparameters),
        so the return value is the variance divided by the relevant kappa.
        """
        V = np.empty((p, 3, 3))
        for l in range(1, p + 1):
            for i in range(3):
                for j in range(3):
                    if i == j:
                        V[l - 1, i, j] = 1.0 / l**2
                    else:
                        V[l - 1, i, j] = self.sigma_sq[i] / (l**2 * self.sigma_sq[j])
        return V


@dataclass(frozen=True)
class ModelSpec:
    p: int
    prior: PriorConfig
    variant: Variant = Variant.BASELINE
    n_obs: int = N_OBS

    def __post_init__(self):
        if self.p < 1:
            raise ValueError("lag order p must be at least 1")
        object.__setattr__(self, "variant", Variant(self.variant))
        if self.n_obs != N_OBS:
            raise ValueError("the model is specified for exactly 3 observables")


@dataclass(frozen=True)
class ParameterDraw:
    """One state of the Gibbs sampler.

    tau, when present, stacks (taubar0 of length 4, then tau_t of length 3
    for t = 1..T).
    """

    Phi: np.ndarray          # (p, 3, 3)
    B: np.ndarray            # (6, 6)
    beta: float
    alpha: float
    kappa1: float
    kappa2: float
    tau: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "Phi", np.asarray(self.Phi, dtype=float))
        object.__setattr__(self, "B", np.asarray(self.B, dtype=float))
        if self.Phi.ndim != 3 or self.Phi.shape[1:] != (3, 3):
            raise ValueError("Phi must have shape (p, 3, 3)")
        if self.B.shape != (6, 6):
            raise ValueError("B must be 6x6")
        if self.alpha <= 0:
            raise ValueError("alpha must be strictly positive")
        if not (0 < self.kappa1 < 1 and 0 < self.kappa2 < 1):
            raise ValueError("kappa1 and kappa2 must lie in (0, 1)")
        if self.tau is not None:
            object.__setattr__(self, "tau", np.asarray(self.tau, dtype=float))

    @property
    def p(self) -> int:
        return self.Phi.shape[0]


@dataclass(frozen=True)
class StructuralMatrices:
    A_tilde: np.ndarray      # (p, 7, 7)
    B_tilde: np.ndarray      # (7, 7)
    Sigma_tilde: np.ndarray  # (7, 7), B_tilde @ B_tilde.T
    Psi1: np.ndarray = field(default_factory=lambda: PSI1.copy())
    Psi2: np.ndarray = field(default_factory=lambda: PSI2.copy())

    @property
    def p(self) -> int:
        return self.A_tilde.shape[0]


@lru_cache(maxsize=None)
def restriction_mask(variant: Variant) -> np.ndarray:
    """Boolean 7x7 mask of the free elements of B_tilde.  Read-only array.

    Row 6 (0-based) is the instrument equation: the first five entries are
    structural zeros for every variant, entry (6, 5) is beta, and (6, 6) is
    alpha, which is always free (with a positivity constraint enforced
    elsewhere).
    """
    variant = Variant(variant)
    mask = np.zeros((7, 7), dtype=bool)
    B_free = np.ones((6, 6), dtype=bool)
    beta_free = True
    if variant is Variant.R1:
        B_free[0:3, 5] = False
    elif variant is Variant.R2:
        beta_free = False
    elif variant is Variant.R3:
        B_free[0:3, 3:6] = False
        B_free[3:6, 0:3] = False
        beta_free = False
    elif variant is Variant.R4:
        B_free = np.eye(6, dtype=bool)
        beta_free = False
    mask[:6, :6] = B_free
    mask[6, 5] = beta_free
    mask[6, 6] = True
    mask.setflags(write=False)
    return mask


def check_restrictions(spec: ModelSpec, draw: ParameterDraw) -> None:
    """Raise RestrictionError if a pinned entry of the draw is nonzero."""
    mask = restriction_mask(spec.variant)
    if np.any(draw.B[~mask[:6, :6]] != 0.0):
        raise RestrictionError(
            f"B has nonzero entries pinned to zero under variant {spec.variant.value}"
        )
    if not mask[6, 5] and draw.beta != 0.0:
        raise RestrictionError(f"beta must be 0 under variant {spec.variant.value}")
    if draw.Phi.shape[0] != spec.p:
        raise RestrictionError("Phi lag count does not match the model spec")


def assemble_structural(spec: ModelSpec, draw: ParameterDraw) -> StructuralMatrices:
    """Build A_tilde_1..A_tilde_p, B_tilde and Sigma_tilde for a draw."""
    check_restrictions(spec, draw)
    p = spec.p
    # The trend block is I(2), so the stacked system always carries two lags
    # even when the cycle VAR has p = 1.
    n_lags = max(p, 2)
    A = np.zeros((n_lags, 7, 7))
    A[0, :3, :3] = PSI1
    A[1, :3, :3] = PSI2
    for i in range(p):
        A[i, 3:6, 3:6] = draw.Phi[i]
    B_tilde = np.zeros((7, 7))
    B_tilde[:6, :6] = draw.B
    B_tilde[6, 5] = draw.beta
    B_tilde[6, 6] = draw.alpha
    Sigma = B_tilde @ B_tilde.T
    return StructuralMatrices(A_tilde=A, B_tilde=B_tilde, Sigma_tilde=Sigma)
