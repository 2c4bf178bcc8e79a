"""Post-estimation structural analysis: shock recovery, impulse responses,
historical decompositions, and trend summaries.

The stacked system is block diagonal between the trend and cycle dynamics, so
trend impulse responses are flat at their impact value while cycle responses
propagate through the cycle VAR alone.  Observables are composed from the two
blocks afterwards.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import mcmc
from .model import MP_SHOCK, ModelSpec, ParameterDraw, assemble_structural

IRF_VARIABLES = ("dg_star", "pi_star", "r_star",
                 "c_g", "c_pi", "c_r", "g", "pi", "r")
ETA_VARIABLES = ("g_star", "pi_star", "r_star", "c_g", "c_pi", "c_r", "m")
HD_VARIABLES = ("g_star", "pi_star", "r_star", "g", "pi", "r")
SHOCK_NAMES = ("eps_1", "eps_2", "eps_3", "eps_4", "eps_5", "eps_mp", "v")
TREND_VARIABLES = ("g_star", "dg_star", "pi_star", "r_star")


def _data_matrix(data) -> np.ndarray:
    y = data.to_matrix() if hasattr(data, "to_matrix") else np.asarray(data, dtype=float)
    if y.ndim != 2 or y.shape[1] != 4:
        raise ValueError("data must provide a (T, 4) matrix of (g, pi, r, m)")
    return y


def recover_shocks(draw: ParameterDraw, data, spec: ModelSpec) -> np.ndarray:
    """Invert the impact matrix on the stacked residuals, shape (T, 7)."""
    if draw.tau is None:
        raise ValueError("the draw carries no state path")
    y = _data_matrix(data)
    mats = assemble_structural(spec, draw)
    U = mcmc.structural_residuals(draw.tau, y, mats)
    try:
        eps = np.linalg.solve(mats.B_tilde, U.T).T
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("B_tilde is singular") from exc
    return eps


# ---------------------------------------------------------------------------
# impulse responses

def _cycle_responses(Phi: np.ndarray, impact: np.ndarray, H: int) -> np.ndarray:
    """Cycle VAR propagation of a length-3 impact, shape (H+1, 3)."""
    p = Phi.shape[0]
    resp = np.zeros((H + 1, 3))
    resp[0] = impact
    for h in range(1, H + 1):
        acc = np.zeros(3)
        for l in range(1, min(p, h) + 1):
            acc += Phi[l - 1] @ resp[h - l]
        resp[h] = acc
    return resp


def irf(draw: ParameterDraw, spec: ModelSpec, H: int = 40,
        shock_index: int = MP_SHOCK) -> np.ndarray:
    """Responses of the nine reported variables to one structural shock.

    Rows follow IRF_VARIABLES; columns are horizons 0..H.  Trend responses
    are constant at the impact value by construction; the g level response
    accumulates the growth-trend response before entering the observable.
    """
    if H < 0:
        raise ValueError("H must be non-negative")
    if not 0 <= shock_index < 7:
        raise ValueError("shock_index must be in 0..6")
    mats = assemble_structural(spec, draw)
    impact = mats.B_tilde[:, shock_index]
    out = np.empty((len(IRF_VARIABLES), H + 1))
    # random-walk trends: responses flat at impact
    out[0] = impact[0]                       # dg_star
    out[1] = impact[1]                       # pi_star
    out[2] = impact[2]                       # r_star
    cyc = _cycle_responses(draw.Phi, impact[3:6], H).T
    out[3:6] = cyc
    g_star_level = impact[0] * np.arange(1, H + 2)
    out[6] = g_star_level + cyc[0]           # g
    out[7] = impact[1] + cyc[1]              # pi
    out[8] = impact[1] + impact[2] + cyc[2]  # r
    return out


@dataclass(frozen=True)
class IrfResult:
    """Per-draw impulse responses with pointwise posterior summaries."""

    horizons: np.ndarray                 # 0..H
    responses: np.ndarray                # (n_draws, 9, H+1)
    explosive: np.ndarray                # (n_draws,) cycle spectral radius >= 1
    shock_index: int

    @property
    def variables(self) -> tuple[str, ...]:
        return IRF_VARIABLES

    def quantiles(self, probs=(0.16, 0.5, 0.84)) -> np.ndarray:
        """Pointwise quantiles over draws, shape (len(probs), 9, H+1)."""
        return np.quantile(self.responses, probs, axis=0)


def irf_summary(chain, spec: ModelSpec, H: int = 40,
                shock_index: int = MP_SHOCK) -> IrfResult:
    resp = np.array([irf(d, spec, H, shock_index) for d in chain.draws])
    explosive = np.array([mcmc.companion_spectral_radius(d.Phi) >= 1.0
                          for d in chain.draws])
    return IrfResult(horizons=np.arange(H + 1), responses=resp,
                     explosive=explosive, shock_index=shock_index)


# ---------------------------------------------------------------------------
# historical decomposition

@dataclass(frozen=True)
class HistoricalDecomposition:
    """Additive split of the fitted stacked path into shock contributions.

    contributions[j] holds the path driven by structural shock j alone;
    deterministic carries the initial conditions forward with no shocks.
    """

    shocks: np.ndarray          # (T, 7) recovered structural shocks
    contributions: np.ndarray   # (7, T, 7) per shock, per period, per variable
    deterministic: np.ndarray   # (T, 7)
    fitted: np.ndarray          # (T, 7) actual stacked path

    def counterfactual_without(self, shock_index: int = MP_SHOCK) -> np.ndarray:
        """Fitted stacked path with one shock's contribution removed."""
        return self.fitted - self.contributions[shock_index]

    def additivity_gap(self) -> float:
        total = self.deterministic + self.contributions.sum(axis=0)
        return float(np.max(np.abs(total - self.fitted)))


def _propagate(A: np.ndarray, innovations: np.ndarray,
               presample: np.ndarray) -> np.ndarray:
    """Run eta_t = sum_i A_i eta_{t-i} + innov_t from given presample rows."""
    n_lags = A.shape[0]
    T = innovations.shape[0]
    eta = np.zeros((T + n_lags, 7))
    eta[:n_lags] = presample
    for t in range(T):
        row = n_lags + t
        acc = innovations[t].copy()
        for i in range(1, n_lags + 1):
            acc += A[i - 1] @ eta[row - i]
        eta[row] = acc
    return eta[n_lags:]


def historical_decomposition(draw: ParameterDraw, data,
                             spec: ModelSpec) -> HistoricalDecomposition:
    y = _data_matrix(data)
    mats = assemble_structural(spec, draw)
    n_lags = mats.A_tilde.shape[0]
    eta = mcmc.eta_tilde_path(draw.tau, y, n_lags)
    presample, fitted = eta[:n_lags], eta[n_lags:]
    eps = recover_shocks(draw, data, spec)
    T = fitted.shape[0]

    deterministic = _propagate(mats.A_tilde, np.zeros((T, 7)), presample)
    contributions = np.empty((7, T, 7))
    zeros = np.zeros_like(presample)
    for j in range(7):
        innov = np.outer(eps[:, j], mats.B_tilde[:, j])
        contributions[j] = _propagate(mats.A_tilde, innov, zeros)
    return HistoricalDecomposition(shocks=eps, contributions=contributions,
                                   deterministic=deterministic, fitted=fitted)


def observable_paths(eta: np.ndarray) -> np.ndarray:
    """Map stacked paths to (g_star, pi_star, r_star, g, pi, r), shape (T, 6)."""
    out = np.empty((eta.shape[0], 6))
    out[:, 0:3] = eta[:, 0:3]
    out[:, 3] = eta[:, 0] + eta[:, 3]
    out[:, 4] = eta[:, 1] + eta[:, 4]
    out[:, 5] = eta[:, 1] + eta[:, 2] + eta[:, 5]
    return out


# ---------------------------------------------------------------------------
# trend summaries

@dataclass(frozen=True)
class TrendSummary:
    """Pointwise posterior quantiles of the trend paths."""

    dates: tuple[str, ...]
    variables: tuple[str, ...]
    q16: np.ndarray   # (n_vars, T)
    q50: np.ndarray
    q84: np.ndarray


def _trend_paths(draw: ParameterDraw, T: int) -> np.ndarray:
    """Rows (g_star, dg_star, pi_star, r_star) for one draw, shape (4, T)."""
    tau = draw.tau
    tau_t = tau[4:].reshape(T, 3)
    g_star = tau_t[:, 0]
    dg = np.empty(T)
    dg[0] = g_star[0] - tau[1]     # g*_0 sits in the initial-state block
    dg[1:] = np.diff(g_star)
    return np.vstack([g_star, dg, tau_t[:, 1], tau_t[:, 2]])


def summarize_trends(chain, data, spec: ModelSpec) -> TrendSummary:
    y = _data_matrix(data)
    T = y.shape[0]
    paths = np.array([_trend_paths(d, T) for d in chain.draws])
    q16, q50, q84 = np.quantile(paths, [0.16, 0.5, 0.84], axis=0)
    dates = tuple(data.dates) if hasattr(data, "dates") else tuple(
        str(t) for t in range(1, T + 1))
    return TrendSummary(dates=dates, variables=TREND_VARIABLES,
                        q16=q16, q50=q50, q84=q84)


# ---------------------------------------------------------------------------
# CSV artifacts

def write_irf_csv(path, result: IrfResult) -> None:
    q16, q50, q84 = result.quantiles()
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("variable,horizon,q16,q50,q84\n")
        for v, name in enumerate(IRF_VARIABLES):
            for h in result.horizons:
                fh.write(f"{name},{h},{q16[v, h]:.17g},"
                         f"{q50[v, h]:.17g},{q84[v, h]:.17g}\n")


def write_trends_csv(path, summary: TrendSummary) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("date,variable,q16,q50,q84\n")
        for v, name in enumerate(summary.variables):
            for t, date in enumerate(summary.dates):
                fh.write(f"{date},{name},{summary.q16[v, t]:.17g},"
                         f"{summary.q50[v, t]:.17g},{summary.q84[v, t]:.17g}\n")


def hd_summary(chain, data, spec: ModelSpec, thin: int = 1) -> dict:
    """Quantiles of per-shock contributions to the reported variables.

    Returns arrays of shape (7, 6, T) for each of q16/q50/q84, with variable
    order HD_VARIABLES, plus the matching quantiles of the counterfactual
    paths with the monetary-policy contribution removed.
    """
    draws = chain.draws[::thin]
    contrib = []
    counter = []
    for d in draws:
        hd = historical_decomposition(d, data, spec)
        contrib.append(np.stack([observable_paths(hd.contributions[j]).T
                                 for j in range(7)]))
        counter.append(observable_paths(hd.counterfactual_without(MP_SHOCK)).T)
    contrib = np.array(contrib)        # (n, 7, 6, T)
    counter = np.array(counter)        # (n, 6, T)
    qc = np.quantile(contrib, [0.16, 0.5, 0.84], axis=0)
    qf = np.quantile(counter, [0.16, 0.5, 0.84], axis=0)
    return {"contrib_q16": qc[0], "contrib_q50": qc[1], "contrib_q84": qc[2],
            "counterfactual_q16": qf[0], "counterfactual_q50": qf[1],
            "counterfactual_q84": qf[2]}


def write_hd_csv(path, chain, data, spec: ModelSpec, thin: int = 1) -> None:
    s = hd_summary(chain, data, spec, thin)
    dates = tuple(data.dates) if hasattr(data, "dates") else None
    T = s["contrib_q50"].shape[2]
    if dates is None:
        dates = tuple(str(t) for t in range(1, T + 1))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("date,variable,shock,q16,q50,q84\n")
        for j, shock in enumerate(SHOCK_NAMES):
            for v, name in enumerate(HD_VARIABLES):
                for t, date in enumerate(dates):
                    fh.write(f"{date},{name},{shock},"
                             f"{s['contrib_q16'][j, v, t]:.17g},"
                             f"{s['contrib_q50'][j, v, t]:.17g},"
                             f"{s['contrib_q84'][j, v, t]:.17g}\n")
        for v, name in enumerate(HD_VARIABLES):
            for t, date in enumerate(dates):
                fh.write(f"{date},{name},counterfactual_no_mp,"
                         f"{s['counterfactual_q16'][v, t]:.17g},"
                         f"{s['counterfactual_q50'][v, t]:.17g},"
                         f"{s['counterfactual_q84'][v, t]:.17g}\n")
